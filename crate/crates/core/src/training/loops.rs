use biplanar_tensor::{no_grad, ops, zero_grad, Sgd, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{loss_joint, loss_labeled, loss_unlabeled, LossConfig};
use super::sampling::{sample_points, Provenance, SamplingConfig};
use super::{derive_seed, EpochLog, StepLog, TrainSchedule, TrainingScene};
use crate::drr::ProjectionImage;
use crate::error::{Error, Result};
use crate::models::{
    enhance_image, probabilities, NamedParams, SegNet, SegNetConfig, StudentConfig, StudentNet, TeacherConfig,
    TeacherFeatures, TeacherNet, ViewInput,
};
use crate::occupancy::OccupancyVector;

pub struct TrainOutcome<N> {
    pub net: N,
    pub epochs: Vec<EpochLog>,
    pub steps: Vec<StepLog>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherTrainConfig {
    pub net: TeacherConfig,
    pub schedule: TrainSchedule,
    pub sampling: SamplingConfig,
}

impl Default for TeacherTrainConfig {
    fn default() -> Self {
        Self {
            net: TeacherConfig::default(),
            schedule: TrainSchedule::teacher_full(),
            sampling: SamplingConfig { n_surface: 0, n_uniform: 5000, ..Default::default() },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmenterTrainConfig {
    pub net: SegNetConfig,
    pub schedule: TrainSchedule,
}

impl Default for SegmenterTrainConfig {
    fn default() -> Self {
        Self { net: SegNetConfig::default(), schedule: TrainSchedule::segmenter_full() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudentTrainConfig {
    pub net: StudentConfig,
    pub schedule: TrainSchedule,
    pub sampling: SamplingConfig,
    pub loss: LossConfig,
    /// Background weight of the enhanced input.
    pub w_m: f64,
    pub mask_threshold: f64,
}

impl Default for StudentTrainConfig {
    fn default() -> Self {
        Self {
            net: StudentConfig::default(),
            schedule: TrainSchedule::student_full(),
            sampling: SamplingConfig::default(),
            loss: LossConfig::default(),
            w_m: 0.5,
            mask_threshold: 0.5,
        }
    }
}

fn tensors(params: &NamedParams) -> Vec<Tensor> {
    params.iter().map(|(_, t)| t.clone()).collect()
}

fn shuffled(n: usize, seed: u64, purpose: &str, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("{purpose}/{epoch}"))));
    order
}

fn mean_of(parts: &[Tensor]) -> Result<Tensor> {
    let mut acc = parts[0].clone();
    for p in &parts[1..] {
        acc = ops::add(&acc, p)?;
    }
    Ok(ops::scale(&acc, 1.0 / parts.len() as f64))
}

fn ensure_finite(value: f64, epoch: usize, step: usize, what: &str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { epoch, step, detail: format!("{what} loss became {value}") })
    }
}

fn epoch_summary(epoch: usize, lr: f64, steps: &[StepLog]) -> EpochLog {
    let n = steps.len() as f64;
    let mean = |f: fn(&StepLog) -> f64| steps.iter().map(f).sum::<f64>() / n;
    EpochLog {
        epoch,
        l_labeled: mean(|s| s.l_labeled),
        l_pseudo: mean(|s| s.l_pseudo),
        l_kd: mean(|s| s.l_kd),
        l_joint: mean(|s| s.l_joint),
        lr,
        max_residual: steps.iter().map(|s| s.residual).fold(0.0, f64::max),
    }
}

fn labeled_batch(scene: &TrainingScene, sampling: &SamplingConfig, seed: u64) -> Result<(Vec<crate::Point3>, Vec<OccupancyVector>)> {
    if scene.meshes.is_empty() && sampling.n_surface > 0 {
        return Err(Error::Training(format!("scene {} has no ground-truth meshes", scene.scene.seed)));
    }
    let meshes = scene.mesh_list();
    let b = sample_points(
        &scene.scene,
        Some(&meshes),
        Provenance::Labeled,
        sampling.n_surface,
        sampling.n_uniform,
        sampling.sigma,
        seed,
    )?;
    Ok((b.points, b.targets.expect("labeled batches carry targets")))
}

/// Cross-entropy training of the CT teacher on oracle-labeled points.
pub fn train_teacher(
    scenes: &[TrainingScene],
    cfg: &TeacherTrainConfig,
    seed: u64,
    on_epoch: &mut dyn FnMut(&EpochLog) -> Result<()>,
) -> Result<TrainOutcome<TeacherNet>> {
    if scenes.is_empty() {
        return Err(Error::Training("teacher training needs at least one labeled scene".into()));
    }
    cfg.schedule.validate()?;
    cfg.sampling.validate()?;
    let net = TeacherNet::new(cfg.net.clone(), derive_seed(seed, "teacher/init"))?;
    let params = tensors(&net.params());
    let mut sgd = Sgd::new(cfg.schedule.momentum);
    let (mut epochs, mut all_steps) = (Vec::new(), Vec::new());
    for epoch in 0..cfg.schedule.epochs {
        let lr = cfg.schedule.lr_at(epoch);
        let order = shuffled(scenes.len(), seed, "teacher/order", epoch);
        let mut steps = Vec::new();
        for (step, batch) in order.chunks(cfg.schedule.batch_size).enumerate() {
            zero_grad(&params);
            let mut losses = Vec::with_capacity(batch.len());
            for &i in batch {
                let s = &scenes[i];
                let (points, targets) =
                    labeled_batch(s, &cfg.sampling, derive_seed(seed, &format!("teacher/points/{epoch}/{step}/{i}")))?;
                let enc = net.encode(&s.ct)?;
                let (_, logits) = net.query(&enc, &points)?;
                losses.push(loss_labeled(&logits, &targets)?);
            }
            let loss = mean_of(&losses)?;
            let value = loss.item();
            ensure_finite(value, epoch, step, "teacher")?;
            loss.backward()?;
            sgd.step(&params, lr)?;
            steps.push(StepLog { epoch, step, l_labeled: value, l_pseudo: 0.0, l_kd: 0.0, l_joint: value, residual: 0.0 });
        }
        let log = epoch_summary(epoch, lr, &steps);
        on_epoch(&log)?;
        epochs.push(log);
        all_steps.extend(steps);
    }
    Ok(TrainOutcome { net, epochs, steps: all_steps })
}

/// Per-pixel cross-entropy training of the bone segmenter.
pub fn train_segmenter(
    pairs: &[(ProjectionImage, Vec<bool>)],
    cfg: &SegmenterTrainConfig,
    seed: u64,
    on_epoch: &mut dyn FnMut(&EpochLog) -> Result<()>,
) -> Result<TrainOutcome<SegNet>> {
    if pairs.is_empty() {
        return Err(Error::Training("segmenter training needs at least one (image, mask) pair".into()));
    }
    cfg.schedule.validate()?;
    for (img, mask) in pairs {
        if img.data.len() != mask.len() {
            return Err(Error::Training(format!("mask has {} pixels, image has {}", mask.len(), img.data.len())));
        }
    }
    let net = SegNet::new(cfg.net.clone(), derive_seed(seed, "segmenter/init"))?;
    let params = tensors(&net.params());
    let mut sgd = Sgd::new(cfg.schedule.momentum);
    let (mut epochs, mut all_steps) = (Vec::new(), Vec::new());
    for epoch in 0..cfg.schedule.epochs {
        let lr = cfg.schedule.lr_at(epoch);
        let order = shuffled(pairs.len(), seed, "segmenter/order", epoch);
        let mut steps = Vec::new();
        for (step, batch) in order.chunks(cfg.schedule.batch_size).enumerate() {
            zero_grad(&params);
            let images: Vec<&ProjectionImage> = batch.iter().map(|&i| &pairs[i].0).collect();
            let logits = net.logits(&images)?;
            let target: Vec<f64> = batch
                .iter()
                .flat_map(|&i| pairs[i].1.iter().flat_map(|&m| if m { [0.0, 1.0] } else { [1.0, 0.0] }))
                .collect();
            let target = Tensor::new(target, logits.shape())?;
            let loss = ops::softmax_cross_entropy(&logits, &target)?;
            let value = loss.item();
            ensure_finite(value, epoch, step, "segmenter")?;
            loss.backward()?;
            sgd.step(&params, lr)?;
            steps.push(StepLog { epoch, step, l_labeled: value, l_pseudo: 0.0, l_kd: 0.0, l_joint: value, residual: 0.0 });
        }
        let log = epoch_summary(epoch, lr, &steps);
        on_epoch(&log)?;
        epochs.push(log);
        all_steps.extend(steps);
    }
    Ok(TrainOutcome { net, epochs, steps: all_steps })
}

fn student_inputs(scene: &TrainingScene, segnet: &SegNet, cfg: &StudentTrainConfig) -> Result<Vec<ViewInput>> {
    let _g = no_grad();
    scene
        .views
        .iter()
        .map(|img| Ok(ViewInput { image: img.clone(), enhanced: enhance_image(segnet, img, cfg.w_m, cfg.mask_threshold)? }))
        .collect()
}

/// Scenes used at `step`: `half` consecutive entries of the epoch order, wrapping around.
fn slot_scenes(order: &[usize], step: usize, half: usize) -> Vec<usize> {
    (0..half).map(|k| order[(step * half + k) % order.len()]).collect()
}

#[allow(clippy::too_many_arguments)]
fn labeled_logits(
    net: &StudentNet,
    scenes: &[TrainingScene],
    inputs: &[Vec<ViewInput>],
    picks: &[usize],
    sampling: &SamplingConfig,
    seed: u64,
    epoch: usize,
    step: usize,
) -> Result<(Tensor, Vec<OccupancyVector>)> {
    let mut logits = Vec::with_capacity(picks.len());
    let mut targets = Vec::new();
    for (slot, &i) in picks.iter().enumerate() {
        let purpose = format!("student/labeled-points/{epoch}/{step}/{slot}/{i}");
        let (points, t) = labeled_batch(&scenes[i], sampling, derive_seed(seed, &purpose))?;
        let enc = net.encode(&inputs[i])?;
        logits.push(net.query(&enc, &points)?.1);
        targets.extend(t);
    }
    let refs: Vec<&Tensor> = logits.iter().collect();
    Ok((ops::concat(&refs, 0)?, targets))
}

/// Semi-supervised student training: labeled cross-entropy, teacher
/// pseudo-labels and feature distillation, combined with the configured weights.
#[allow(clippy::too_many_arguments)]
pub fn train_student(
    labeled: &[TrainingScene],
    unlabeled: &[TrainingScene],
    teacher: &TeacherNet,
    segnet: &SegNet,
    cfg: &StudentTrainConfig,
    seed: u64,
    on_epoch: &mut dyn FnMut(&EpochLog) -> Result<()>,
) -> Result<TrainOutcome<StudentNet>> {
    if labeled.is_empty() {
        return Err(Error::Training("student training needs at least one labeled scene".into()));
    }
    cfg.schedule.validate()?;
    cfg.sampling.validate()?;
    cfg.loss.validate()?;
    let net = StudentNet::new(cfg.net.clone(), derive_seed(seed, "student/init"))?;
    let params = tensors(&net.params());
    let lab_inputs: Vec<Vec<ViewInput>> = labeled.iter().map(|s| student_inputs(s, segnet, cfg)).collect::<Result<_>>()?;
    let unl_inputs: Vec<Vec<ViewInput>> = unlabeled.iter().map(|s| student_inputs(s, segnet, cfg)).collect::<Result<_>>()?;
    // The teacher is frozen; its CT features never change.
    let teacher_cache: Vec<TeacherFeatures> = {
        let _g = no_grad();
        unlabeled.iter().map(|s| teacher.encode(&s.ct)).collect::<Result<_>>()?
    };
    let half = (cfg.schedule.batch_size / 2).max(1);
    let steps_per_epoch = labeled.len().max(unlabeled.len()).div_ceil(half);
    let w = &cfg.loss;
    let mut sgd = Sgd::new(cfg.schedule.momentum);
    let (mut epochs, mut all_steps) = (Vec::new(), Vec::new());
    for epoch in 0..cfg.schedule.epochs {
        let lr = cfg.schedule.lr_at(epoch);
        let lab_order = shuffled(labeled.len(), seed, "student/labeled-order", epoch);
        let unl_order = shuffled(unlabeled.len(), seed, "student/unlabeled-order", epoch);
        let mut steps = Vec::new();
        for step in 0..steps_per_epoch {
            zero_grad(&params);
            let picks = slot_scenes(&lab_order, step, half);
            let (logits, targets) = labeled_logits(&net, labeled, &lab_inputs, &picks, &cfg.sampling, seed, epoch, step)?;
            let lab = loss_labeled(&logits, &targets)?;

            let (joint, pseudo_v, kd_v) = if unlabeled.is_empty() {
                (ops::scale(&lab, 1.0 - w.w_u), 0.0, 0.0)
            } else {
                let mut s_logits = Vec::new();
                let mut s_feats = Vec::new();
                let mut t_feats = Vec::new();
                let mut t_probs = Vec::new();
                for (slot, &i) in slot_scenes(&unl_order, step, half).iter().enumerate() {
                    let purpose = format!("student/unlabeled-points/{epoch}/{step}/{slot}/{i}");
                    let batch = sample_points(
                        &unlabeled[i].scene,
                        None,
                        Provenance::Unlabeled,
                        0,
                        cfg.sampling.n_unlabeled,
                        0.0,
                        derive_seed(seed, &purpose),
                    )?;
                    {
                        let _g = no_grad();
                        let (f, l) = teacher.query(&teacher_cache[i], &batch.points)?;
                        t_feats.push(f);
                        t_probs.extend(probabilities(&l)?);
                    }
                    let enc = net.encode(&unl_inputs[i])?;
                    let (f, l) = net.query(&enc, &batch.points)?;
                    s_feats.push(f);
                    s_logits.push(l);
                }
                let cat = |v: &[Tensor]| -> Result<Tensor> { Ok(ops::concat(&v.iter().collect::<Vec<_>>(), 0)?) };
                let unl = loss_unlabeled(&cat(&s_logits)?, &cat(&s_feats)?, &t_probs, &cat(&t_feats)?, &net.gamma, w)?;
                (loss_joint(&lab, &unl.total, w)?, unl.pseudo.item(), unl.kd.item())
            };
            let (lab_v, joint_v) = (lab.item(), joint.item());
            ensure_finite(joint_v, epoch, step, "student joint")?;
            let residual = (joint_v - ((1.0 - w.w_u) * lab_v + w.w_u * pseudo_v + w.w_k * kd_v)).abs();
            joint.backward()?;
            sgd.step(&params, lr)?;
            steps.push(StepLog { epoch, step, l_labeled: lab_v, l_pseudo: pseudo_v, l_kd: kd_v, l_joint: joint_v, residual });
        }
        let log = epoch_summary(epoch, lr, &steps);
        on_epoch(&log)?;
        epochs.push(log);
        all_steps.extend(steps);
    }
    Ok(TrainOutcome { net, epochs, steps: all_steps })
}

/// Plain supervised student training (labeled cross-entropy only), the
/// reference for the `w_u = 0` ablation.
pub fn train_supervised(
    labeled: &[TrainingScene],
    segnet: &SegNet,
    cfg: &StudentTrainConfig,
    seed: u64,
    on_epoch: &mut dyn FnMut(&EpochLog) -> Result<()>,
) -> Result<TrainOutcome<StudentNet>> {
    if labeled.is_empty() {
        return Err(Error::Training("supervised training needs at least one labeled scene".into()));
    }
    cfg.schedule.validate()?;
    cfg.sampling.validate()?;
    let net = StudentNet::new(cfg.net.clone(), derive_seed(seed, "student/init"))?;
    let params = tensors(&net.params());
    let inputs: Vec<Vec<ViewInput>> = labeled.iter().map(|s| student_inputs(s, segnet, cfg)).collect::<Result<_>>()?;
    let half = (cfg.schedule.batch_size / 2).max(1);
    let steps_per_epoch = labeled.len().div_ceil(half);
    let mut sgd = Sgd::new(cfg.schedule.momentum);
    let (mut epochs, mut all_steps) = (Vec::new(), Vec::new());
    for epoch in 0..cfg.schedule.epochs {
        let lr = cfg.schedule.lr_at(epoch);
        let order = shuffled(labeled.len(), seed, "student/labeled-order", epoch);
        let mut steps = Vec::new();
        for step in 0..steps_per_epoch {
            zero_grad(&params);
            let picks = slot_scenes(&order, step, half);
            let (logits, targets) = labeled_logits(&net, labeled, &inputs, &picks, &cfg.sampling, seed, epoch, step)?;
            let loss = loss_labeled(&logits, &targets)?;
            let value = loss.item();
            ensure_finite(value, epoch, step, "supervised")?;
            loss.backward()?;
            sgd.step(&params, lr)?;
            steps.push(StepLog { epoch, step, l_labeled: value, l_pseudo: 0.0, l_kd: 0.0, l_joint: value, residual: 0.0 });
        }
        let log = epoch_summary(epoch, lr, &steps);
        on_epoch(&log)?;
        epochs.push(log);
        all_steps.extend(steps);
    }
    Ok(TrainOutcome { net, epochs, steps: all_steps })
}

