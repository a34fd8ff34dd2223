//! The seven pipeline stages. Each reads the previous stages' files under the
//! output root, writes its own directory and finishes with a manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use biplanar_core::io::{
    load_image, load_json, load_mask_png, load_mesh, load_volume, save_image, save_json, save_mask_png, save_mesh,
    save_png16, sidecar_path, write_atomic,
};
use biplanar_core::isosurface::reconstruct_all;
use biplanar_core::metrics::{sample_surface_points, score_meshes, vertex_distances, voxelize, BoneScores};
use biplanar_core::models::{SegNet, StudentNet, TeacherNet};
use biplanar_core::phantom::generate_scene;
use biplanar_core::training::{
    derive_seed, prepare_scene, train_segmenter, train_student, train_teacher, EpochLog, TrainingScene,
};
use biplanar_core::{BoneClass, PhantomScene, TriangleMesh};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::{hash_files, Manifest, MANIFEST_FILE, MANIFEST_SCHEMA_VERSION};

pub const STAGES: [&str; 7] = ["gen", "render", "train-teacher", "train-seg", "train-student", "reconstruct", "evaluate"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Labeled,
    Validation,
    Test,
    Unlabeled,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Labeled, Split::Validation, Split::Test, Split::Unlabeled];

    pub fn name(self) -> &'static str {
        match self {
            Split::Labeled => "labeled",
            Split::Validation => "validation",
            Split::Test => "test",
            Split::Unlabeled => "unlabeled",
        }
    }

    /// Whether ground-truth meshes are rendered for this split.
    pub fn has_ground_truth(self) -> bool {
        self != Split::Unlabeled
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub id: String,
    pub split: Split,
    pub seed: u64,
}

/// Where every artifact lives under the output root.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.root.join(stage)
    }

    pub fn manifest(&self, stage: &str) -> PathBuf {
        self.stage_dir(stage).join(MANIFEST_FILE)
    }

    pub fn dataset(&self) -> PathBuf {
        self.stage_dir("gen").join("dataset.json")
    }

    pub fn scene(&self, id: &str) -> PathBuf {
        self.stage_dir("gen").join("scenes").join(format!("{id}.json"))
    }

    pub fn render_dir(&self, id: &str) -> PathBuf {
        self.stage_dir("render").join(id)
    }

    pub fn teacher(&self) -> PathBuf {
        self.stage_dir("train-teacher").join("teacher")
    }

    pub fn segnet(&self) -> PathBuf {
        self.stage_dir("train-seg").join("segnet")
    }

    pub fn student(&self) -> PathBuf {
        self.stage_dir("train-student").join("student")
    }

    pub fn reconstruction(&self, id: &str, bone: BoneClass) -> PathBuf {
        self.stage_dir("reconstruct").join(id).join(format!("{}.ply", bone.name()))
    }

    pub fn metrics_csv(&self) -> PathBuf {
        self.stage_dir("evaluate").join("metrics.csv")
    }
}

fn checkpoint_files(base: &Path) -> [PathBuf; 2] {
    [base.with_extension("bin"), base.with_extension("json")]
}

struct StageRun<'a> {
    name: &'static str,
    layout: &'a Layout,
    cfg: &'a RunConfig,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    seeds: BTreeMap<String, u64>,
    timings: BTreeMap<String, f64>,
}

impl<'a> StageRun<'a> {
    fn new(name: &'static str, layout: &'a Layout, cfg: &'a RunConfig) -> Self {
        Self { name, layout, cfg, inputs: Vec::new(), outputs: Vec::new(), seeds: BTreeMap::new(), timings: BTreeMap::new() }
    }

    fn fail(&self) -> impl Fn(biplanar_core::Error) -> CliError {
        let stage = self.name;
        move |source| CliError::Stage { stage, source }
    }

    fn seed(&mut self, purpose: &str) -> u64 {
        let s = derive_seed(self.cfg.seed, purpose);
        self.seeds.insert(purpose.to_string(), s);
        s
    }

    /// Records `files` as inputs and runs `load`; a missing file names the stage that makes it.
    fn read<T>(&mut self, files: &[PathBuf], load: impl FnOnce() -> biplanar_core::Result<T>) -> Result<T, CliError> {
        for f in files {
            if !f.exists() {
                let producer = f
                    .strip_prefix(&self.layout.root)
                    .ok()
                    .and_then(|r| r.components().next())
                    .map(|c| c.as_os_str().to_string_lossy().into_owned())
                    .unwrap_or_default();
                return Err(CliError::Input {
                    stage: self.name,
                    msg: format!("missing input {}; run `biplanar {producer}` first", f.display()),
                });
            }
        }
        self.inputs.extend(files.iter().cloned());
        load().map_err(self.fail())
    }

    fn write(&mut self, files: &[PathBuf], save: impl FnOnce() -> biplanar_core::Result<()>) -> Result<(), CliError> {
        save().map_err(self.fail())?;
        self.outputs.extend(files.iter().cloned());
        Ok(())
    }

    fn dataset(&mut self) -> Result<Vec<DatasetEntry>, CliError> {
        let path = self.layout.dataset();
        self.read(&[path.clone()], || load_json(&path))
    }

    fn scene(&mut self, id: &str) -> Result<PhantomScene, CliError> {
        let path = self.layout.scene(id);
        self.read(&[path.clone()], || load_json(&path))
    }

    fn views(&mut self, id: &str) -> Result<Vec<biplanar_core::drr::ProjectionImage>, CliError> {
        let dir = self.layout.render_dir(id);
        let mut out = Vec::new();
        for view in self.cfg.scene.geometry.views {
            let p = dir.join(format!("{}.f32", view.label()));
            out.push(self.read(&[p.clone(), sidecar_path(&p)], || load_image(&p))?);
        }
        Ok(out)
    }

    fn ground_truth(&mut self, id: &str, bone: BoneClass) -> Result<TriangleMesh, CliError> {
        let p = self.layout.render_dir(id).join(format!("{}.ply", bone.name()));
        self.read(&[p.clone()], || load_mesh(&p))
    }

    fn training_scene(&mut self, entry: &DatasetEntry) -> Result<TrainingScene, CliError> {
        let scene = self.scene(&entry.id)?;
        let dir = self.layout.render_dir(&entry.id);
        let ct_path = dir.join("ct.f32");
        let ct = self.read(&[ct_path.clone(), sidecar_path(&ct_path)], || load_volume(&ct_path))?;
        let views = self.views(&entry.id)?;
        let mut masks = Vec::new();
        for view in self.cfg.scene.geometry.views {
            let p = dir.join(format!("{}_mask.png", view.label()));
            masks.push(self.read(&[p.clone()], || load_mask_png(&p))?);
        }
        let mut meshes = Vec::new();
        if entry.split.has_ground_truth() {
            for bone in BoneClass::ALL {
                meshes.push((bone, self.ground_truth(&entry.id, bone)?));
            }
        }
        Ok(TrainingScene { scene, ct, views, masks, meshes })
    }

    fn training_scenes(&mut self, split: Split) -> Result<Vec<TrainingScene>, CliError> {
        let entries: Vec<DatasetEntry> = self.dataset()?.into_iter().filter(|e| e.split == split).collect();
        entries.iter().map(|e| self.training_scene(e)).collect()
    }

    fn write_log(&mut self, lines: &[EpochLog]) -> Result<(), CliError> {
        let path = self.layout.stage_dir(self.name).join("log.jsonl");
        let mut text = String::new();
        for l in lines {
            text.push_str(&serde_json::to_string(l).expect("log lines serialise"));
            text.push('\n');
        }
        self.write(&[path.clone()], || write_atomic(&path, text.as_bytes()))
    }

    /// Writes the resolved config and the manifest; returns the manifest.
    fn finish(mut self) -> Result<Manifest, CliError> {
        let dir = self.layout.stage_dir(self.name);
        let echo = dir.join("config.json");
        let cfg = self.cfg;
        self.write(&[echo.clone()], || save_json(cfg, &echo))?;
        let io = |e: std::io::Error| CliError::Stage { stage: self.name, source: e.into() };
        let manifest = Manifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            stage: self.name.to_string(),
            seeds: self.seeds.clone(),
            inputs: hash_files(&self.layout.root, &self.inputs).map_err(io)?,
            outputs: hash_files(&self.layout.root, &self.outputs).map_err(io)?,
            timings: self.timings.clone(),
        };
        let path = self.layout.manifest(self.name);
        save_json(&manifest, &path).map_err(self.fail())?;
        Ok(manifest)
    }
}

fn progress(stage: &str, log: &EpochLog) {
    println!("{}", json!({ "stage": stage, "epoch": log }));
}

/// Runs one stage by name and returns its manifest.
pub fn run_stage(stage: &str, layout: &Layout, cfg: &RunConfig) -> Result<Manifest, CliError> {
    match stage {
        "gen" => gen(layout, cfg),
        "render" => render(layout, cfg),
        "train-teacher" => teacher(layout, cfg),
        "train-seg" => segmenter(layout, cfg),
        "train-student" => student(layout, cfg),
        "reconstruct" => reconstruct(layout, cfg),
        "evaluate" => evaluate(layout, cfg),
        other => Err(CliError::Usage(format!("unknown stage {other}"))),
    }
}

fn gen(layout: &Layout, cfg: &RunConfig) -> Result<Manifest, CliError> {
    let mut run = StageRun::new("gen", layout, cfg);
    let d = &cfg.dataset;
    let mut entries = Vec::new();
    for split in Split::ALL {
        let n = match split {
            Split::Labeled => d.labeled,
            Split::Validation => d.validation,
            Split::Test => d.test,
            Split::Unlabeled => d.unlabeled,
        };
        for i in 0..n {
            let id = format!("{}-{i:03}", split.name());
            let seed = run.seed(&format!("scene/{id}"));
            let scene = generate_scene(seed, &cfg.phantom).map_err(run.fail())?;
            let path = layout.scene(&id);
            run.write(&[path.clone()], || save_json(&scene, &path))?;
            entries.push(DatasetEntry { id, split, seed });
        }
    }
    let path = layout.dataset();
    run.write(&[path.clone()], || save_json(&entries, &path))?;
    run.finish()
}

fn render(layout: &Layout, cfg: &RunConfig) -> Result<Manifest, CliError> {
    let mut run = StageRun::new("render", layout, cfg);
    let t0 = Instant::now();
    for entry in run.dataset()? {
        let scene = run.scene(&entry.id)?;
        let noise = run.seed(&format!("noise/{}", entry.id));
        let ts = prepare_scene(&scene, &cfg.scene, noise, entry.split.has_ground_truth()).map_err(run.fail())?;
        let dir = layout.render_dir(&entry.id);
        let ct = dir.join("ct.f32");
        run.write(&[ct.clone(), sidecar_path(&ct)], || biplanar_core::io::save_volume(&ts.ct, &ct))?;
        for ((view, img), mask) in cfg.scene.geometry.views.iter().zip(&ts.views).zip(&ts.masks) {
            let label = view.label();
            let raw = dir.join(format!("{label}.f32"));
            let png = dir.join(format!("{label}.png"));
            let mpng = dir.join(format!("{label}_mask.png"));
            run.write(&[raw.clone(), sidecar_path(&raw)], || save_image(img, &raw))?;
            run.write(&[png.clone()], || save_png16(img, &png))?;
            run.write(&[mpng.clone()], || save_mask_png(mask, img.width, img.height, &mpng))?;
        }
        for (bone, mesh) in &ts.meshes {
            let p = dir.join(format!("{}.ply", bone.name()));
            run.write(&[p.clone()], || save_mesh(mesh, &p))?;
        }
    }
    run.timings.insert("total_s".into(), t0.elapsed().as_secs_f64());
    run.finish()
}

fn teacher(layout: &Layout, cfg: &RunConfig) -> Result<Manifest, CliError> {
    let mut run = StageRun::new("train-teacher", layout, cfg);
    let scenes = run.training_scenes(Split::Labeled)?;
    let seed = run.seed("train-teacher");
    let t0 = Instant::now();
    let out = train_teacher(&scenes, &cfg.teacher, seed, &mut |l| {
        progress("train-teacher", l);
        Ok(())
    })
    .map_err(run.fail())?;
    run.timings.insert("train_s".into(), t0.elapsed().as_secs_f64());
    let base = layout.teacher();
    run.write(&checkpoint_files(&base), || out.net.save(&base))?;
    run.write_log(&out.epochs)?;
    run.finish()
}

fn segmenter(layout: &Layout, cfg: &RunConfig) -> Result<Manifest, CliError> {
    let mut run = StageRun::new("train-seg", layout, cfg);
    let scenes = run.training_scenes(Split::Labeled)?;
    let pairs: Vec<_> = scenes.iter().flat_map(|s| s.views.iter().cloned().zip(s.masks.iter().cloned())).collect();
    let seed = run.seed("train-seg");
    let t0 = Instant::now();
    let out = train_segmenter(&pairs, &cfg.segmenter, seed, &mut |l| {
        progress("train-seg", l);
        Ok(())
    })
    .map_err(run.fail())?;
    run.timings.insert("train_s".into(), t0.elapsed().as_secs_f64());
    let base = layout.segnet();
    run.write(&checkpoint_files(&base), || out.net.save(&base))?;
    run.write_log(&out.epochs)?;
    run.finish()
}

fn student(layout: &Layout, cfg: &RunConfig) -> Result<Manifest, CliError> {
    let mut run = StageRun::new("train-student", layout, cfg);
    let labeled = run.training_scenes(Split::Labeled)?;
    let unlabeled = run.training_scenes(Split::Unlabeled)?;
    let tbase = layout.teacher();
    let teacher = run.read(&checkpoint_files(&tbase), || TeacherNet::load(&tbase))?;
    let sbase = layout.segnet();
    let segnet = run.read(&checkpoint_files(&sbase), || SegNet::load(&sbase))?;
    let seed = run.seed("train-student");
    let t0 = Instant::now();
    let out = train_student(&labeled, &unlabeled, &teacher, &segnet, &cfg.student, seed, &mut |l| {
        progress("train-student", l);
        Ok(())
    })
    .map_err(run.fail())?;
    run.timings.insert("train_s".into(), t0.elapsed().as_secs_f64());
    let base = layout.student();
    run.write(&checkpoint_files(&base), || out.net.save(&base))?;
    run.write_log(&out.epochs)?;
    run.finish()
}

fn test_entries(run: &mut StageRun) -> Result<Vec<DatasetEntry>, CliError> {
    Ok(run.dataset()?.into_iter().filter(|e| e.split == Split::Test).collect())
}

fn reconstruct(layout: &Layout, cfg: &RunConfig) -> Result<Manifest, CliError> {
    let mut run = StageRun::new("reconstruct", layout, cfg);
    let sbase = layout.student();
    let student = run.read(&checkpoint_files(&sbase), || StudentNet::load(&sbase))?;
    let gbase = layout.segnet();
    let segnet = run.read(&checkpoint_files(&gbase), || SegNet::load(&gbase))?;
    let r = &cfg.reconstruction;
    for entry in test_entries(&mut run)? {
        let views = run.views(&entry.id)?;
        let rec = reconstruct_all(&student, &segnet, &views, cfg.student.w_m, cfg.student.mask_threshold, r.resolution, r.chunk, r.iso)
            .map_err(run.fail())?;
        let t = &rec.timings;
        for (name, v) in [("enhance_s", t.enhance_s), ("encode_s", t.encode_s), ("field_s", t.field_s), ("extract_s", t.extract_s), ("total_s", t.total())] {
            run.timings.insert(format!("{}/{name}", entry.id), v);
        }
        println!("{}", json!({ "stage": "reconstruct", "scene": entry.id, "resolution": r.resolution, "timings": t }));
        for (bone, mesh) in &rec.meshes {
            let p = layout.reconstruction(&entry.id, *bone);
            run.write(&[p.clone()], || save_mesh(mesh, &p))?;
        }
    }
    run.finish()
}

/// One CSV row; distances are infinite when nothing was reconstructed and
/// NaN when a score is undefined (reported in `issues`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scene_id: String,
    pub bone: String,
    pub assd_mm: f64,
    pub hd_mm: f64,
    pub dsc_pct: f64,
}

fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

pub const CSV_HEADER: &str = "scene_id,bone,assd_mm,hd_mm,dsc_pct";

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.scene_id,
            r.bone,
            fmt_value(r.assd_mm),
            fmt_value(r.hd_mm),
            fmt_value(r.dsc_pct)
        ));
    }
    s
}

fn score_bone(pred: &TriangleMesh, gt: &TriangleMesh, cfg: &RunConfig, mm: f64) -> Result<BoneScores, String> {
    if pred.is_empty() {
        let dsc = biplanar_core::metrics::dice(
            &voxelize(pred, cfg.metrics.dsc_resolution).map_err(|e| e.to_string())?,
            &voxelize(gt, cfg.metrics.dsc_resolution).map_err(|e| e.to_string())?,
        )
        .map_err(|e| e.to_string())?;
        return Ok(BoneScores { assd_mm: f64::INFINITY, hd_mm: f64::INFINITY, dsc_pct: dsc });
    }
    score_meshes(pred, gt, &cfg.metrics, mm).map_err(|e| e.to_string())
}

fn evaluate(layout: &Layout, cfg: &RunConfig) -> Result<Manifest, CliError> {
    let mut run = StageRun::new("evaluate", layout, cfg);
    let mut rows = Vec::new();
    let mut issues = Vec::new();
    let dir = layout.stage_dir("evaluate");
    for entry in test_entries(&mut run)? {
        let mm = run.scene(&entry.id)?.mm_per_unit;
        for bone in BoneClass::ALL {
            let gt = run.ground_truth(&entry.id, bone)?;
            let p = layout.reconstruction(&entry.id, bone);
            let pred = run.read(&[p.clone()], || load_mesh(&p))?;
            let scores = match score_bone(&pred, &gt, cfg, mm) {
                Ok(s) => s,
                Err(msg) => {
                    issues.push(json!({ "scene_id": entry.id, "bone": bone.name(), "message": msg }));
                    BoneScores { assd_mm: f64::NAN, hd_mm: f64::NAN, dsc_pct: f64::NAN }
                }
            };
            if !pred.is_empty() {
                let cloud = sample_surface_points(&gt, cfg.metrics.samples, cfg.metrics.sample_seed)
                    .map_err(run.fail())?;
                let d = vertex_distances(&pred, &cloud, mm).map_err(run.fail())?;
                let vp = dir.join("vertex_mm").join(format!("{}_{}.json", entry.id, bone.name()));
                run.write(&[vp.clone()], || save_json(&d, &vp))?;
            }
            rows.push(MetricRow {
                scene_id: entry.id.clone(),
                bone: bone.name().to_string(),
                assd_mm: scores.assd_mm,
                hd_mm: scores.hd_mm,
                dsc_pct: scores.dsc_pct,
            });
        }
    }
    let csv = layout.metrics_csv();
    let text = metrics_csv(&rows);
    run.write(&[csv.clone()], || write_atomic(&csv, text.as_bytes()))?;
    let summary = dir.join("summary.json");
    let means: BTreeMap<String, Value> = BoneClass::ALL
        .iter()
        .map(|b| {
            let mine: Vec<&MetricRow> = rows.iter().filter(|r| r.bone == b.name()).collect();
            let mean = |f: fn(&MetricRow) -> f64| {
                let v: Vec<f64> = mine.iter().map(|r| f(r)).filter(|x| x.is_finite()).collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            };
            (b.name().to_string(), json!({ "assd_mm": mean(|r| r.assd_mm), "hd_mm": mean(|r| r.hd_mm), "dsc_pct": mean(|r| r.dsc_pct) }))
        })
        .collect();
    let body = json!({ "mean_over_finite": means, "issues": issues });
    run.write(&[summary.clone()], || save_json(&body, &summary))?;
    for i in &issues {
        eprintln!("{}", json!({ "warning": i }));
    }
    run.finish()
}
