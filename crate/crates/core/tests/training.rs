use biplanar_core::geometry::GeometryConfig;
use biplanar_core::models::{EncoderConfig, SegNetConfig, StudentConfig, TeacherConfig, TeacherNet};
use biplanar_core::phantom::generate_scene;
use biplanar_core::training::*;
use biplanar_core::{Error, OccupancyVector, PhantomConfig};
use biplanar_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PX: usize = 16;

fn tiny_scene(seed: u64, labeled: bool) -> TrainingScene {
    let cfg = SceneBuildConfig {
        geometry: GeometryConfig { detector_px: PX, ..Default::default() },
        drr: Default::default(),
        ct_resolution: 16,
        mesh_resolution: 24,
    };
    prepare_scene(&generate_scene(seed, &PhantomConfig::default()).unwrap(), &cfg, seed, labeled).unwrap()
}

fn tiny_schedule(epochs: usize, lr: f64) -> TrainSchedule {
    TrainSchedule { epochs, batch_size: 2, lr, momentum: 0.9, decay_factor: 0.1, decay_period: 100 }
}

fn tiny_teacher_cfg(epochs: usize, lr: f64) -> TeacherTrainConfig {
    TeacherTrainConfig {
        net: TeacherConfig { ct_resolution: 16, encoder: EncoderConfig { base_width: 2, levels: 2 }, input_scale: 2.0 },
        schedule: tiny_schedule(epochs, lr),
        sampling: SamplingConfig { n_surface: 50, n_uniform: 50, n_unlabeled: 100, sigma: 0.03 },
    }
}

fn tiny_student_cfg(epochs: usize, loss: LossConfig) -> StudentTrainConfig {
    StudentTrainConfig {
        net: StudentConfig { image_px: PX, encoder: EncoderConfig { base_width: 2, levels: 2 } },
        schedule: tiny_schedule(epochs, 0.005),
        sampling: SamplingConfig { n_surface: 40, n_uniform: 40, n_unlabeled: 60, sigma: 0.03 },
        loss,
        w_m: 0.5,
        mask_threshold: 0.5,
    }
}

fn tiny_segnet() -> biplanar_core::models::SegNet {
    biplanar_core::models::SegNet::new(SegNetConfig { encoder: EncoderConfig { base_width: 2, levels: 2 } }, 1).unwrap()
}

fn snapshot(params: &[(String, Tensor)]) -> Vec<Vec<f64>> {
    params.iter().map(|(_, t)| t.to_vec()).collect()
}

fn no_log() -> impl FnMut(&EpochLog) -> biplanar_core::Result<()> {
    |_| Ok(())
}

#[test]
fn zero_sigma_samples_lie_on_the_mesh() {
    let s = tiny_scene(3, true);
    let meshes = s.mesh_list();
    let b = sample_points(&s.scene, Some(&meshes), Provenance::Labeled, 300, 0, 0.0, 4).unwrap();
    for p in &b.points {
        let on = meshes.iter().any(|m| {
            (0..m.triangles.len()).any(|t| {
                let [a, b, c] = m.corners(t);
                let n = (b - a).cross(&(c - a));
                let n2 = n.norm_squared();
                let plane = (p - a).dot(&n) / n2.sqrt();
                let inside = [(c - b).cross(&(p - b)), (a - c).cross(&(p - c)), (b - a).cross(&(p - a))]
                    .iter()
                    .all(|e| e.dot(&n) >= -1e-9 * n2);
                plane.abs() <= 1e-9 && inside
            })
        });
        assert!(on, "{p:?} is off the surface");
    }
}

#[test]
fn uniform_samples_are_centred() {
    let s = tiny_scene(3, false);
    let n = 20_000;
    let b = sample_points(&s.scene, None, Provenance::Unlabeled, 0, n, 0.03, 11).unwrap();
    assert!(b.targets.is_none());
    let bound = 3.0 * (1.0 / 3.0f64).sqrt() / (n as f64).sqrt();
    for axis in 0..3 {
        let mean = b.points.iter().map(|p| p[axis]).sum::<f64>() / n as f64;
        assert!(mean.abs() <= bound, "axis {axis} mean {mean}");
    }
}

#[test]
fn sampling_is_seeded_and_labeled_needs_meshes() {
    let s = tiny_scene(3, true);
    let meshes = s.mesh_list();
    let a = sample_points(&s.scene, Some(&meshes), Provenance::Labeled, 100, 100, 0.03, 5).unwrap();
    assert_eq!(a, sample_points(&s.scene, Some(&meshes), Provenance::Labeled, 100, 100, 0.03, 5).unwrap());
    assert_eq!(a.points.len(), 200);
    let targets = a.targets.unwrap();
    assert!(targets.iter().all(|t| t.0.iter().filter(|&&v| v == 1.0).count() == 1));
    assert!(a.points.iter().all(|p| p.iter().all(|c| c.abs() <= 1.0)));
    assert!(sample_points(&s.scene, None, Provenance::Labeled, 10, 10, 0.03, 5).is_err());
}

fn random_logits(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n * 5).map(|_| rng.random_range(-3.0..3.0)).collect()
}

#[test]
fn labeled_loss_cases() {
    let targets: Vec<OccupancyVector> = (0..6).map(|i| OccupancyVector::one_hot(i % 5)).collect();
    let saturated: Vec<f64> = targets.iter().flat_map(|t| t.0.map(|v| if v == 1.0 { 30.0 } else { 0.0 })).collect();
    assert!(loss_labeled(&Tensor::new(saturated, &[6, 5]).unwrap(), &targets).unwrap().item() < 1e-4);
    let uniform = loss_labeled(&Tensor::new(vec![0.7; 30], &[6, 5]).unwrap(), &targets).unwrap().item();
    assert!((uniform - 5f64.ln()).abs() <= 1e-9);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z = random_logits(&mut rng, 6);
    let got = loss_labeled(&Tensor::new(z.clone(), &[6, 5]).unwrap(), &targets).unwrap().item();
    let mut want = 0.0;
    for (row, t) in z.chunks(5).zip(&targets) {
        let denom: f64 = row.iter().map(|v| v.exp()).sum();
        want -= t.0.iter().zip(row).map(|(y, v)| y * (v.exp() / denom).ln()).sum::<f64>();
    }
    assert!((got - want / 6.0).abs() <= 1e-10);

    let soft = vec![OccupancyVector([0.5, 0.5, 0.0, 0.0, 0.0]); 6];
    assert!(loss_labeled(&Tensor::new(z, &[6, 5]).unwrap(), &soft).is_err());
}

#[test]
fn unlabeled_and_joint_losses() {
    let student = biplanar_core::models::StudentNet::new(StudentConfig { image_px: PX, encoder: EncoderConfig { base_width: 2, levels: 2 } }, 1)
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 7;
    let logits = Tensor::new(random_logits(&mut rng, n), &[n, 5]).unwrap();
    let feats = Tensor::new((0..n * 514).map(|_| rng.random_range(-1.0..1.0)).collect(), &[n, 514]).unwrap();
    let probs: Vec<OccupancyVector> = (0..n).map(|_| OccupancyVector::from_logits(&random_logits(&mut rng, 1))).collect();
    let t_feats = Tensor::new((0..n * 64).map(|_| rng.random_range(-1.0..1.0)).collect(), &[n, 64]).unwrap();
    let cfg = LossConfig::default();

    let fixed = student.project_features(&feats).unwrap().detach();
    let l = loss_unlabeled(&logits, &feats, &probs, &fixed, &student.gamma, &cfg).unwrap();
    assert_eq!(l.kd.item(), 0.0);

    let zero = LossConfig { w_u: 0.0, w_k: 0.0 };
    assert_eq!(loss_unlabeled(&logits, &feats, &probs, &t_feats, &student.gamma, &zero).unwrap().total.item(), 0.0);

    let l = loss_unlabeled(&logits, &feats, &probs, &t_feats, &student.gamma, &cfg).unwrap();
    let pseudo_targets: Vec<OccupancyVector> = probs.iter().map(biplanar_core::one_hot_inference).collect();
    let pseudo = loss_labeled(&logits, &pseudo_targets).unwrap().item();
    let proj = student.project_features(&feats).unwrap().to_vec();
    let kd = proj.iter().zip(t_feats.to_vec()).map(|(a, b)| (a - b).abs()).sum::<f64>() / (n * 64) as f64;
    assert!((l.pseudo.item() - pseudo).abs() <= 1e-12);
    assert!((l.kd.item() - kd).abs() <= 1e-12);
    assert!((l.total.item() - (0.5 * pseudo + 0.1 * kd)).abs() <= 1e-12);

    let lab = Tensor::scalar(0.8);
    let joint = loss_joint(&lab, &l.total, &cfg).unwrap().item();
    assert!((joint - (0.5 * 0.8 + 0.5 * pseudo + 0.1 * kd)).abs() <= 1e-12);
    let w0 = LossConfig { w_u: 0.0, w_k: 0.1 };
    let l0 = loss_unlabeled(&logits, &feats, &probs, &t_feats, &student.gamma, &w0).unwrap();
    assert!((loss_joint(&lab, &l0.total, &w0).unwrap().item() - (0.8 + 0.1 * kd)).abs() <= 1e-12);
    let w1 = LossConfig { w_u: 1.0, w_k: 0.1 };
    let l1 = loss_unlabeled(&logits, &feats, &probs, &t_feats, &student.gamma, &w1).unwrap();
    assert!((loss_joint(&Tensor::scalar(123.0), &l1.total, &w1).unwrap().item() - l1.total.item()).abs() <= 1e-12);

    assert!(loss_unlabeled(&logits, &t_feats, &probs, &t_feats, &student.gamma, &cfg).is_err());
}

#[test]
fn zero_learning_rate_freezes_teacher() {
    let scenes = [tiny_scene(3, true)];
    let cfg = tiny_teacher_cfg(2, 0.0);
    let init = TeacherNet::new(cfg.net.clone(), derive_seed(9, "teacher/init")).unwrap();
    let out = train_teacher(&scenes, &cfg, 9, &mut no_log()).unwrap();
    assert_eq!(snapshot(&init.params()), snapshot(&out.net.params()));
}

#[test]
fn teacher_runs_are_reproducible_and_logged() {
    let scenes = [tiny_scene(3, true), tiny_scene(4, true), tiny_scene(5, true)];
    let cfg = tiny_teacher_cfg(3, 0.01);
    let mut lines = Vec::new();
    let a = train_teacher(&scenes, &cfg, 9, &mut |e| {
        lines.push(serde_json::to_string(e).unwrap());
        Ok(())
    })
    .unwrap();
    let b = train_teacher(&scenes, &cfg, 9, &mut no_log()).unwrap();
    assert_eq!(a.epochs, b.epochs);
    assert_eq!(a.steps.len(), 3 * 2);
    assert_eq!(lines.len(), 3);
    let v: serde_json::Value = serde_json::from_str(&lines[0]).unwrap();
    for key in ["epoch", "L_labeled", "L_pseudo", "L_kd", "L_joint", "lr"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert!(train_teacher(&[], &cfg, 9, &mut no_log()).is_err());
}

#[test]
fn divergence_is_reported() {
    let scenes = [tiny_scene(3, true)];
    let mut cfg = tiny_teacher_cfg(30, 1e12);
    cfg.schedule.momentum = 0.0;
    match train_teacher(&scenes, &cfg, 1, &mut no_log()) {
        Err(Error::Diverged { .. }) => {}
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("training with lr 1e12 did not diverge"),
    }
}

#[test]
fn student_with_no_unlabeled_matches_supervised() {
    let labeled = [tiny_scene(3, true), tiny_scene(4, true)];
    let seg = tiny_segnet();
    let teacher = TeacherNet::new(tiny_teacher_cfg(1, 0.0).net, 1).unwrap();
    let cfg = tiny_student_cfg(3, LossConfig { w_u: 0.0, w_k: 0.1 });
    let semi = train_student(&labeled, &[], &teacher, &seg, &cfg, 21, &mut no_log()).unwrap();
    let sup = train_supervised(&labeled, &seg, &cfg, 21, &mut no_log()).unwrap();
    let trace = |o: &TrainOutcome<biplanar_core::models::StudentNet>| o.steps.iter().map(|s| s.l_joint.to_bits()).collect::<Vec<_>>();
    assert_eq!(trace(&semi), trace(&sup));
    assert_eq!(semi.steps.len(), 3 * 2);
}

#[test]
fn student_step_invariants() {
    let labeled = [tiny_scene(3, true)];
    let unlabeled = [tiny_scene(4, false), tiny_scene(5, false)];
    let seg = tiny_segnet();
    let teacher = TeacherNet::new(tiny_teacher_cfg(1, 0.0).net, 1).unwrap();
    let (t0, s0) = (snapshot(&teacher.params()), snapshot(&seg.params()));
    let cfg = tiny_student_cfg(2, LossConfig::default());
    let out = train_student(&labeled, &unlabeled, &teacher, &seg, &cfg, 4, &mut no_log()).unwrap();
    assert_eq!(snapshot(&teacher.params()), t0);
    assert_eq!(snapshot(&seg.params()), s0);
    assert_eq!(out.steps.len(), 2 * 2);
    for s in &out.steps {
        assert!(s.residual <= 1e-12, "residual {}", s.residual);
        assert!(s.l_pseudo > 0.0 && s.l_kd > 0.0);
    }
    let again = train_student(&labeled, &unlabeled, &teacher, &seg, &cfg, 4, &mut no_log()).unwrap();
    assert_eq!(out.epochs, again.epochs);
    assert!(train_student(&[], &unlabeled, &teacher, &seg, &cfg, 4, &mut no_log()).is_err());
}

#[test]
fn segmenter_learns_degenerate_and_single_targets() {
    let s = tiny_scene(3, true);
    let cfg = SegmenterTrainConfig {
        net: SegNetConfig { encoder: EncoderConfig { base_width: 4, levels: 2 } },
        schedule: TrainSchedule { epochs: 60, batch_size: 1, lr: 0.01, momentum: 0.9, decay_factor: 0.1, decay_period: 100 },
    };
    let background = [(s.views[0].clone(), vec![false; PX * PX])];
    let net = train_segmenter(&background, &cfg, 2, &mut no_log()).unwrap().net;
    let p = net.probabilities(&s.views[0]).unwrap();
    assert!(p.iter().sum::<f64>() / p.len() as f64 <= 0.1);

    let cfg = SegmenterTrainConfig {
        net: SegNetConfig::default(),
        schedule: TrainSchedule { epochs: 150, momentum: 0.98, ..cfg.schedule },
    };
    let pair = [(s.views[0].clone(), s.masks[0].clone())];
    let net = train_segmenter(&pair, &cfg, 2, &mut no_log()).unwrap().net;
    let pred = net.predict_mask(&s.views[0], 0.5).unwrap();
    let tp = pred.iter().zip(&s.masks[0]).filter(|(a, b)| **a && **b).count() as f64;
    let dice = 2.0 * tp / (pred.iter().filter(|&&v| v).count() + s.masks[0].iter().filter(|&&v| v).count()) as f64;
    assert!(dice >= 0.95, "mask dice {dice}");
}
