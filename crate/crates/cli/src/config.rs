//! Run configuration: presets, JSON overrides and validation.

use std::path::Path;

use biplanar_core::geometry::GeometryConfig;
use biplanar_core::metrics::MetricConfig;
use biplanar_core::models::{EncoderConfig, SegNetConfig, StudentConfig, TeacherConfig};
use biplanar_core::training::{
    LossConfig, SamplingConfig, SceneBuildConfig, SegmenterTrainConfig, StudentTrainConfig, TeacherTrainConfig,
    TrainSchedule,
};
use biplanar_core::PhantomConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    Full,
}

/// Scene counts per split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub labeled: usize,
    pub validation: usize,
    pub test: usize,
    pub unlabeled: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructionConfig {
    /// Lattice nodes per axis.
    pub resolution: usize,
    /// Points per network evaluation.
    pub chunk: usize,
    pub iso: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub phantom: PhantomConfig,
    pub dataset: DatasetConfig,
    pub scene: SceneBuildConfig,
    pub teacher: TeacherTrainConfig,
    pub segmenter: SegmenterTrainConfig,
    pub student: StudentTrainConfig,
    pub reconstruction: ReconstructionConfig,
    pub metrics: MetricConfig,
}

impl RunConfig {
    /// Small enough to run the whole pipeline on one core in minutes.
    pub fn desk() -> Self {
        let schedule = |batch_size| TrainSchedule { epochs: 50, batch_size, ..TrainSchedule::teacher_full() };
        Self {
            preset: Preset::Desk,
            seed: 0,
            phantom: PhantomConfig::default(),
            dataset: DatasetConfig { labeled: 4, validation: 1, test: 2, unlabeled: 4 },
            scene: SceneBuildConfig {
                geometry: GeometryConfig { detector_px: 64, ..Default::default() },
                drr: Default::default(),
                ct_resolution: 32,
                mesh_resolution: 64,
            },
            teacher: TeacherTrainConfig {
                net: TeacherConfig::default(),
                schedule: schedule(2),
                sampling: SamplingConfig { n_surface: 0, n_uniform: 2000, ..Default::default() },
            },
            segmenter: SegmenterTrainConfig { net: SegNetConfig::default(), schedule: schedule(4) },
            student: StudentTrainConfig {
                schedule: schedule(2),
                sampling: SamplingConfig { n_surface: 1000, n_uniform: 1000, n_unlabeled: 2000, sigma: 0.03 },
                ..Default::default()
            },
            reconstruction: ReconstructionConfig { resolution: 64, chunk: 16384, iso: 0.5 },
            metrics: MetricConfig { dsc_resolution: 64, ..Default::default() },
        }
    }

    /// Published dataset split, schedule and point counts with wider encoders.
    pub fn full() -> Self {
        let encoder = EncoderConfig { base_width: 32, levels: 4 };
        Self {
            preset: Preset::Full,
            seed: 0,
            phantom: PhantomConfig::default(),
            dataset: DatasetConfig { labeled: 70, validation: 10, test: 40, unlabeled: 485 },
            scene: SceneBuildConfig {
                geometry: GeometryConfig { detector_px: 256, ..Default::default() },
                drr: Default::default(),
                ct_resolution: 256,
                mesh_resolution: 192,
            },
            teacher: TeacherTrainConfig {
                net: TeacherConfig { ct_resolution: 256, encoder, ..Default::default() },
                schedule: TrainSchedule::teacher_full(),
                sampling: SamplingConfig::default(),
            },
            segmenter: SegmenterTrainConfig { net: SegNetConfig { encoder }, schedule: TrainSchedule::segmenter_full() },
            student: StudentTrainConfig {
                net: StudentConfig { image_px: 256, encoder },
                schedule: TrainSchedule::student_full(),
                sampling: SamplingConfig::default(),
                loss: LossConfig::default(),
                w_m: 0.5,
                mask_threshold: 0.5,
            },
            reconstruction: ReconstructionConfig { resolution: 256, chunk: 65536, iso: 0.5 },
            metrics: MetricConfig::default(),
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self::desk(),
            Preset::Full => Self::full(),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let core = |e: biplanar_core::Error| CliError::Config(e.to_string());
        self.phantom.validate().map_err(core)?;
        self.teacher.net.validate().map_err(core)?;
        self.student.net.validate().map_err(core)?;
        self.metrics.validate().map_err(core)?;
        self.student.loss.validate().map_err(core)?;
        for s in [&self.teacher.sampling, &self.student.sampling] {
            s.validate().map_err(core)?;
        }
        for s in [&self.teacher.schedule, &self.segmenter.schedule, &self.student.schedule] {
            s.validate().map_err(core)?;
        }
        self.segmenter.net.encoder.validate().map_err(core)?;
        let d = &self.dataset;
        if d.labeled == 0 || d.test == 0 {
            return Err(CliError::Config("dataset needs at least one labeled and one test scene".into()));
        }
        if self.teacher.net.ct_resolution != self.scene.ct_resolution {
            return Err(CliError::Config(format!(
                "teacher.net.ct_resolution {} differs from scene.ct_resolution {}",
                self.teacher.net.ct_resolution, self.scene.ct_resolution
            )));
        }
        if self.student.net.image_px != self.scene.geometry.detector_px {
            return Err(CliError::Config(format!(
                "student.net.image_px {} differs from scene.geometry.detector_px {}",
                self.student.net.image_px, self.scene.geometry.detector_px
            )));
        }
        if !(0.0..=1.0).contains(&self.student.w_m) || !(self.student.mask_threshold > 0.0 && self.student.mask_threshold < 1.0) {
            return Err(CliError::Config("student.w_m must lie in [0, 1] and mask_threshold in (0, 1)".into()));
        }
        let r = &self.reconstruction;
        if r.resolution < 8 || r.chunk == 0 || !(r.iso > 0.0 && r.iso < 1.0) {
            return Err(CliError::Config("reconstruction needs resolution >= 8, chunk >= 1 and iso in (0, 1)".into()));
        }
        if self.scene.mesh_resolution < 8 {
            return Err(CliError::Config("scene.mesh_resolution must be >= 8".into()));
        }
        if self.preset == Preset::Full {
            self.check_full_pins()?;
        }
        Ok(())
    }

    fn check_full_pins(&self) -> Result<(), CliError> {
        let mut bad = Vec::new();
        let mut pin = |name: &str, got: f64, want: f64| {
            if got != want {
                bad.push(format!("{name} = {got} (pinned to {want})"));
            }
        };
        pin("student.loss.w_u", self.student.loss.w_u, 0.5);
        pin("student.loss.w_k", self.student.loss.w_k, 0.1);
        pin("student.w_m", self.student.w_m, 0.5);
        for (name, s) in [("teacher", &self.teacher.schedule), ("segmenter", &self.segmenter.schedule), ("student", &self.student.schedule)] {
            pin(&format!("{name}.schedule.momentum"), s.momentum, 0.98);
            pin(&format!("{name}.schedule.lr"), s.lr, 0.01);
            pin(&format!("{name}.schedule.decay_factor"), s.decay_factor, 0.1);
            pin(&format!("{name}.schedule.decay_period"), s.decay_period as f64, 100.0);
            pin(&format!("{name}.schedule.epochs"), s.epochs as f64, 400.0);
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(format!("full preset pins violated: {}", bad.join(", "))))
        }
    }
}

/// Recursively overlays `patch` on `base`; objects merge key by key, anything
/// else replaces. Keys absent from `base` are kept so deserialisation rejects them.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Command-line overrides, applied after the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub resolution: Option<usize>,
}

/// Preset defaults, then the optional JSON file, then flag overrides.
pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let user = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            let v: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            if !v.is_object() {
                return Err(CliError::Config(format!("{}: top level must be a JSON object", p.display())));
            }
            v
        }
        None => Value::Object(Default::default()),
    };
    let preset = match overrides.preset {
        Some(p) => p,
        None => match user.get("preset") {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| CliError::Config(format!("preset: {e}")))?,
            None => Preset::Desk,
        },
    };
    let mut merged = serde_json::to_value(RunConfig::preset(preset)).map_err(|e| CliError::Config(e.to_string()))?;
    merge(&mut merged, user);
    merged["preset"] = serde_json::to_value(preset).map_err(|e| CliError::Config(e.to_string()))?;
    let mut cfg: RunConfig = serde_json::from_value(merged).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(s) = overrides.seed {
        cfg.seed = s;
    }
    if let Some(r) = overrides.resolution {
        cfg.reconstruction.resolution = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        RunConfig::desk().validate().unwrap();
        RunConfig::full().validate().unwrap();
    }

    #[test]
    fn merge_overlays_nested_keys() {
        let mut base = serde_json::json!({"a": {"b": 1, "c": 2}, "d": 3});
        merge(&mut base, serde_json::json!({"a": {"c": 5}, "e": 6}));
        assert_eq!(base, serde_json::json!({"a": {"b": 1, "c": 5}, "d": 3, "e": 6}));
    }
}
