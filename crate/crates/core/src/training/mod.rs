//! Point samplers, losses and the teacher, segmenter and student training loops.

mod loops;
mod losses;
mod sampling;

pub use loops::{
    train_segmenter, train_student, train_supervised, train_teacher, SegmenterTrainConfig, StudentTrainConfig,
    TeacherTrainConfig, TrainOutcome,
};
pub use losses::{loss_joint, loss_labeled, loss_unlabeled, targets_tensor, LossConfig, UnlabeledLoss};
pub use sampling::{sample_points, Provenance, SampleBatch, SamplingConfig};

use biplanar_tensor::step_decay;
use serde::{Deserialize, Serialize};

use crate::drr::{bone_mask, simulate_view, DrrConfig, ProjectionImage};
use crate::error::{Error, Result};
use crate::geometry::{CameraGeometry, GeometryConfig};
use crate::isosurface::TriangleMesh;
use crate::occupancy::BoneClass;
use crate::phantom::{density_volume, mesh_oracle, PhantomScene};
use crate::volume::Volume3D;

/// Independent stream seed for one named purpose (splitmix64 over an FNV-1a hash).
pub fn derive_seed(base: u64, purpose: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in purpose.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = base ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    pub epochs: usize,
    /// Scenes per optimiser step.
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub decay_factor: f64,
    pub decay_period: usize,
}

impl TrainSchedule {
    pub fn teacher_full() -> Self {
        Self { epochs: 400, batch_size: 3, lr: 0.01, momentum: 0.98, decay_factor: 0.1, decay_period: 100 }
    }

    pub fn student_full() -> Self {
        Self { batch_size: 4, ..Self::teacher_full() }
    }

    pub fn segmenter_full() -> Self {
        Self { batch_size: 8, ..Self::teacher_full() }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        step_decay(self.lr, self.decay_factor, self.decay_period, epoch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("schedule needs epochs >= 1 and batch_size >= 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "schedule needs lr >= 0 and momentum in [0, 1), got {} and {}",
                self.lr, self.momentum
            )));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config(format!("decay factor must lie in (0, 1], got {}", self.decay_factor)));
        }
        Ok(())
    }
}

/// One line of the JSON-lines training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    #[serde(rename = "L_labeled")]
    pub l_labeled: f64,
    #[serde(rename = "L_pseudo")]
    pub l_pseudo: f64,
    #[serde(rename = "L_kd")]
    pub l_kd: f64,
    #[serde(rename = "L_joint")]
    pub l_joint: f64,
    pub lr: f64,
    /// Largest per-step `|L_joint - ((1 - w_u) L_labeled + w_u L_pseudo + w_k L_kd)|`.
    pub max_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub l_labeled: f64,
    pub l_pseudo: f64,
    pub l_kd: f64,
    pub l_joint: f64,
    pub residual: f64,
}

/// Everything the training loops need from one phantom.
#[derive(Clone, Debug)]
pub struct TrainingScene {
    pub scene: PhantomScene,
    pub ct: Volume3D,
    /// Noisy log-normalised radiographs, one per view.
    pub views: Vec<ProjectionImage>,
    /// Bone masks (bone-only line integral `> 0`), one per view.
    pub masks: Vec<Vec<bool>>,
    /// Ground-truth bone surfaces; empty for unlabeled scenes.
    pub meshes: Vec<(BoneClass, TriangleMesh)>,
}

impl TrainingScene {
    pub fn mesh_list(&self) -> Vec<TriangleMesh> {
        self.meshes.iter().map(|(_, m)| m.clone()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneBuildConfig {
    pub geometry: GeometryConfig,
    pub drr: DrrConfig,
    pub ct_resolution: usize,
    pub mesh_resolution: usize,
}

/// Renders the CT, both radiographs, masks and (when labeled) oracle meshes.
pub fn prepare_scene(scene: &PhantomScene, cfg: &SceneBuildConfig, noise_seed: u64, labeled: bool) -> Result<TrainingScene> {
    let ct = density_volume(scene, cfg.ct_resolution)?;
    let mut views = Vec::with_capacity(2);
    let mut masks = Vec::with_capacity(2);
    for (i, &view) in cfg.geometry.views.iter().enumerate() {
        let g = CameraGeometry::from_config(&cfg.geometry, view)?;
        views.push(simulate_view(scene, &g, &cfg.drr, derive_seed(noise_seed, &format!("noise/{i}")))?);
        masks.push(bone_mask(scene, &g, cfg.drr.step)?);
    }
    let meshes = if labeled {
        BoneClass::ALL
            .iter()
            .filter(|&&c| scene.bone(c).is_some())
            .map(|&c| Ok((c, mesh_oracle(scene, c, cfg.mesh_resolution)?)))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    Ok(TrainingScene { scene: scene.clone(), ct, views, masks, meshes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_differ_by_purpose_and_base() {
        let a = derive_seed(1, "teacher/order");
        assert_eq!(a, derive_seed(1, "teacher/order"));
        assert_ne!(a, derive_seed(2, "teacher/order"));
        assert_ne!(a, derive_seed(1, "student/order"));
    }

    #[test]
    fn full_schedule_decays_every_hundred_epochs() {
        let s = TrainSchedule::teacher_full();
        assert_eq!(s.lr_at(0), 0.01);
        assert_eq!(s.lr_at(99), 0.01);
        assert_eq!(s.lr_at(100), 0.01 * 0.1);
        assert_eq!(s.lr_at(399), 0.01 * 0.1f64.powi(3));
    }
}
