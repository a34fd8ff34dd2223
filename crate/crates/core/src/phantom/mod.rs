//! Procedural four-bone knee phantoms with exact inside/outside queries.
//!
//! Every bone is a union of closed primitives. Scenes are built from a fixed
//! template, perturbed by seeded jitter, and accepted only when bones of
//! different classes keep their bounding boxes apart by the configured
//! clearance, stay inside `[-1, 1]^3` and the soft-tissue envelope, and each
//! cover enough volume to be learnable.

mod primitive;

pub use primitive::{Aabb, Primitive};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::isosurface::{edge_point, marching_cubes_with, ScalarGrid, TriangleMesh};
use crate::occupancy::{BoneClass, OccupancyVector};
use crate::volume::Volume3D;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attenuation {
    /// Per unit length.
    pub bone: f64,
    pub soft_tissue: f64,
}

impl Default for Attenuation {
    fn default() -> Self {
        Self { bone: 0.5, soft_tissue: 0.02 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    /// Multiplier on every random perturbation; 0 reproduces the template.
    pub jitter: f64,
    /// Minimum bounding-box gap between primitives of different bones.
    pub clearance: f64,
    pub max_attempts: usize,
    /// Randomly reflect the leg through `x = 0`.
    pub allow_mirror: bool,
    /// Minimum bone volume as a fraction of the `[-1, 1]^3` cube.
    pub min_coverage: f64,
    pub attenuation: Attenuation,
    pub mm_per_unit: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            jitter: 1.0,
            clearance: 0.02,
            max_attempts: 200,
            allow_mirror: true,
            min_coverage: 0.001,
            attenuation: Attenuation::default(),
            mm_per_unit: 100.0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.jitter >= 0.0
            && self.jitter <= 2.0
            && self.clearance >= 0.0
            && self.max_attempts > 0
            && (0.0..0.1).contains(&self.min_coverage)
            && self.attenuation.bone >= 0.0
            && self.attenuation.soft_tissue >= 0.0
            && self.mm_per_unit > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("phantom config out of range: {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bone {
    pub class: BoneClass,
    pub primitives: Vec<Primitive>,
}

impl Bone {
    pub fn contains(&self, p: &Point3) -> bool {
        self.primitives.iter().any(|q| q.contains(p))
    }

    pub fn aabb(&self) -> Aabb {
        self.primitives.iter().fold(Aabb::empty(), |acc, q| acc.union(&q.aabb()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope {
    pub center: [f64; 3],
    pub radii: [f64; 3],
}

impl Envelope {
    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).map(|i| ((p[i] - self.center[i]) / self.radii[i]).powi(2)).sum::<f64>() <= 1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Material {
    Air,
    SoftTissue,
    Bone(BoneClass),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomScene {
    pub seed: u64,
    pub bones: Vec<Bone>,
    pub envelope: Option<Envelope>,
    pub attenuation: Attenuation,
    pub mm_per_unit: f64,
}

fn in_cube(p: &Point3) -> bool {
    p.x.abs() <= 1.0 && p.y.abs() <= 1.0 && p.z.abs() <= 1.0
}

impl PhantomScene {
    pub fn empty() -> Self {
        Self { seed: 0, bones: Vec::new(), envelope: None, attenuation: Attenuation::default(), mm_per_unit: 100.0 }
    }

    pub fn bone(&self, class: BoneClass) -> Option<&Bone> {
        self.bones.iter().find(|b| b.class == class)
    }

    /// Class index in `0..=4` of the bone containing `p` (0 for none).
    pub fn classify(&self, p: &Point3) -> usize {
        self.bones.iter().find(|b| b.contains(p)).map_or(0, |b| b.class.index())
    }

    pub fn material(&self, p: &Point3) -> Material {
        if !in_cube(p) {
            return Material::Air;
        }
        match BoneClass::from_index(self.classify(p)) {
            Some(c) => Material::Bone(c),
            None if self.envelope.is_some_and(|e| e.contains(p)) => Material::SoftTissue,
            None => Material::Air,
        }
    }

    pub fn attenuation_of(&self, m: Material) -> f64 {
        match m {
            Material::Air => 0.0,
            Material::SoftTissue => self.attenuation.soft_tissue,
            Material::Bone(_) => self.attenuation.bone,
        }
    }

    pub fn density(&self, p: &Point3) -> f64 {
        self.attenuation_of(self.material(p))
    }

    /// Lattice estimate of a bone's volume (`n^3` cell midpoints inside its box).
    pub fn bone_volume_estimate(&self, class: BoneClass, n: usize) -> f64 {
        let Some(bone) = self.bone(class) else { return 0.0 };
        let bb = bone.aabb();
        let d = bb.max - bb.min;
        let mut hits = 0usize;
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let p = Point3::new(
                        bb.min.x + d.x * (i as f64 + 0.5) / n as f64,
                        bb.min.y + d.y * (j as f64 + 0.5) / n as f64,
                        bb.min.z + d.z * (k as f64 + 0.5) / n as f64,
                    );
                    if bone.contains(&p) {
                        hits += 1;
                    }
                }
            }
        }
        bb.volume() * hits as f64 / (n * n * n) as f64
    }

    /// Checks the structural invariants enforced during generation.
    pub fn check(&self, cfg: &PhantomConfig) -> std::result::Result<(), String> {
        for bone in &self.bones {
            for prim in &bone.primitives {
                let bb = prim.aabb();
                for c in bb.corners() {
                    if !in_cube(&c) {
                        return Err(format!("{} extends outside [-1, 1]^3", bone.class.name()));
                    }
                    if let Some(env) = &self.envelope {
                        if !env.contains(&c) {
                            return Err(format!("{} pokes out of the soft-tissue envelope", bone.class.name()));
                        }
                    }
                }
            }
        }
        for (i, a) in self.bones.iter().enumerate() {
            for b in &self.bones[i + 1..] {
                for pa in &a.primitives {
                    for pb in &b.primitives {
                        let gap = pa.aabb().separation(&pb.aabb());
                        if gap < cfg.clearance {
                            return Err(format!(
                                "{} and {} closer than clearance ({gap:.4} < {})",
                                a.class.name(),
                                b.class.name(),
                                cfg.clearance
                            ));
                        }
                    }
                }
            }
        }
        for bone in &self.bones {
            // 5% headroom absorbs the lattice estimate's own error.
            let v = self.bone_volume_estimate(bone.class, 32);
            if v < 1.05 * cfg.min_coverage * 8.0 {
                return Err(format!("{} too small (volume {v:.5})", bone.class.name()));
            }
        }
        Ok(())
    }
}

pub fn occupancy_oracle(scene: &PhantomScene, p: &Point3) -> OccupancyVector {
    OccupancyVector::one_hot(scene.classify(p))
}

/// Draws `j * U(lo, hi)`; always consumes one sample so the stream layout is
/// independent of the jitter level.
fn jit(rng: &mut ChaCha8Rng, j: f64, half_range: f64) -> f64 {
    j * rng.random_range(-half_range..half_range)
}

fn template(rng: &mut ChaCha8Rng, j: f64) -> (Vec<Bone>, Envelope, f64, [f64; 3], bool) {
    let scale = 1.0 + jit(rng, j, 0.06);
    let shift = [jit(rng, j, 0.03), jit(rng, j, 0.03), jit(rng, j, 0.03)];

    let fr = 0.15 * (1.0 + jit(rng, j, 0.1));
    let (ftx, fty) = (jit(rng, j, 0.03), jit(rng, j, 0.03));
    let cs = 1.0 + jit(rng, j, 0.1);
    let spread = jit(rng, j, 0.01);
    let femur = Bone {
        class: BoneClass::Femur,
        primitives: vec![
            Primitive::Capsule { a: [0.0, 0.02, 0.30], b: [ftx, fty, 0.78], radius: fr },
            Primitive::Ellipsoid { center: [-0.11 - spread, 0.02, 0.17], radii: [0.11 * cs, 0.15 * cs, 0.12 * cs] },
            Primitive::Ellipsoid { center: [0.11 + spread, 0.02, 0.17], radii: [0.11 * cs, 0.15 * cs, 0.12 * cs] },
        ],
    };

    let ps = 1.0 + jit(rng, j, 0.08);
    let taper = jit(rng, j, 0.15);
    let exponent = 2.5 + jit(rng, j, 0.5);
    let tr = 0.13 * (1.0 + jit(rng, j, 0.1));
    let (ttx, tty) = (jit(rng, j, 0.04), jit(rng, j, 0.04));
    let tibia = Bone {
        class: BoneClass::Tibia,
        primitives: vec![
            Primitive::SuperEllipsoid {
                center: [0.0, 0.02, -0.09],
                radii: [0.25 * ps, 0.19 * ps, 0.06],
                exponent,
                taper,
            },
            Primitive::Capsule { a: [0.0, 0.02, -0.22], b: [ttx, 0.03 + tty, -0.78], radius: tr },
        ],
    };

    let (fx, fy) = (jit(rng, j, 0.03), jit(rng, j, 0.03));
    let fbr = 0.07 * (1.0 + jit(rng, j, 0.1));
    let hs = 1.0 + jit(rng, j, 0.1);
    let fibula = Bone {
        class: BoneClass::Fibula,
        primitives: vec![
            Primitive::Capsule { a: [0.40 + fx, 0.08 + fy, -0.30], b: [0.40 + fx, 0.08 + fy, -0.82], radius: fbr },
            Primitive::Ellipsoid { center: [0.40 + fx, 0.08 + fy, -0.22], radii: [0.085 * hs, 0.085 * hs, 0.07 * hs] },
        ],
    };

    let (px, py, pz) = (jit(rng, j, 0.02), jit(rng, j, 0.02), jit(rng, j, 0.04));
    let prs = 1.0 + jit(rng, j, 0.1);
    let patella = Bone {
        class: BoneClass::Patella,
        primitives: vec![Primitive::Ellipsoid {
            center: [px, -0.32 + py, 0.14 + pz],
            radii: [0.18 * prs, 0.09 * prs, 0.19 * prs],
        }],
    };

    let flip = rng.random_bool(0.5);
    let envelope = Envelope { center: [0.05, -0.03, 0.0], radii: [0.8, 0.7, 1.4] };
    (vec![patella, femur, fibula, tibia], envelope, scale, shift, flip)
}

/// Deterministic scene for `seed`; retries jittered placements until the
/// structural invariants hold.
pub fn generate_scene(seed: u64, cfg: &PhantomConfig) -> Result<PhantomScene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = String::new();
    for _ in 0..cfg.max_attempts {
        let (bones, envelope, scale, shift, flip) = template(&mut rng, cfg.jitter);
        let mirror = flip && cfg.allow_mirror && cfg.jitter > 0.0;
        let bones = bones
            .into_iter()
            .map(|b| Bone {
                class: b.class,
                primitives: b
                    .primitives
                    .iter()
                    .map(|p| {
                        let q = p.scaled_shifted(scale, shift);
                        if mirror {
                            q.mirrored_x()
                        } else {
                            q
                        }
                    })
                    .collect(),
            })
            .collect();
        let envelope = if mirror {
            Envelope { center: [-envelope.center[0], envelope.center[1], envelope.center[2]], ..envelope }
        } else {
            envelope
        };
        let scene = PhantomScene {
            seed,
            bones,
            envelope: Some(envelope),
            attenuation: cfg.attenuation,
            mm_per_unit: cfg.mm_per_unit,
        };
        match scene.check(cfg) {
            Ok(()) => return Ok(scene),
            Err(e) => last = e,
        }
    }
    Err(Error::Phantom { seed, msg: format!("placement failed after {} attempts: {last}", cfg.max_attempts) })
}

/// Synthetic CT sampled at voxel centres of a `resolution^3` grid over `[-1, 1]^3`.
pub fn density_volume(scene: &PhantomScene, resolution: usize) -> Result<Volume3D> {
    if resolution < 16 {
        return Err(Error::Config(format!("CT resolution must be >= 16, got {resolution}")));
    }
    let mut vol = Volume3D::cube(resolution);
    for k in 0..resolution {
        for j in 0..resolution {
            for i in 0..resolution {
                let p = vol.voxel_center(k, j, i);
                let idx = vol.index(k, j, i);
                vol.data[idx] = scene.density(&p);
            }
        }
    }
    Ok(vol)
}

/// Ground-truth surface of one bone, extracted from the exact occupancy on a
/// `resolution^3` node lattice over `[-1, 1]^3`. Edge crossings are located by
/// bisection on the analytic inside test, so vertices lie on the true surface
/// to within `2 / (resolution - 1) / 2^20` (apart from the node margin).
pub fn mesh_oracle(scene: &PhantomScene, bone: BoneClass, resolution: usize) -> Result<TriangleMesh> {
    let b = scene
        .bone(bone)
        .ok_or_else(|| Error::Phantom { seed: scene.seed, msg: format!("scene has no {}", bone.name()) })?;
    if resolution < 8 {
        return Err(Error::Isosurface(format!("oracle resolution must be >= 8, got {resolution}")));
    }
    let h = 2.0 / (resolution - 1) as f64;
    let node = |i: usize| -1.0 + h * i as f64;
    // Restrict the lattice to the nodes around the bone's box.
    let bb = b.aabb();
    let lo = |v: f64| ((((v + 1.0) / h).floor() as isize) - 1).clamp(0, resolution as isize - 1) as usize;
    let hi = |v: f64| ((((v + 1.0) / h).ceil() as isize) + 1).clamp(0, resolution as isize - 1) as usize;
    let (i0, i1) = (lo(bb.min.x), hi(bb.max.x));
    let (j0, j1) = (lo(bb.min.y), hi(bb.max.y));
    let (k0, k1) = (lo(bb.min.z), hi(bb.max.z));
    let dims = [i1 - i0 + 1, j1 - j0 + 1, k1 - k0 + 1];
    let mut values = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for k in k0..=k1 {
        for j in j0..=j1 {
            for i in i0..=i1 {
                values.push(if b.contains(&Point3::new(node(i), node(j), node(k))) { 1.0 } else { 0.0 });
            }
        }
    }
    let grid = ScalarGrid::new(dims, Point3::new(node(i0), node(j0), node(k0)), [h; 3], values)?;
    let mesh = marching_cubes_with(&grid, 0.5, |a, _, b_pt, _| {
        let a_inside = b.contains(&a);
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..20 {
            let m = 0.5 * (lo + hi);
            if b.contains(&(a + m * (b_pt - a))) == a_inside {
                lo = m;
            } else {
                hi = m;
            }
        }
        edge_point(a, b_pt, 0.5 * (lo + hi))
    })?;
    if mesh.triangles.is_empty() {
        return Err(Error::Phantom { seed: scene.seed, msg: format!("{} produced an empty surface", bone.name()) });
    }
    Ok(mesh.with_class(bone))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_has_eight_primitives() {
        let cfg = PhantomConfig { jitter: 0.0, ..Default::default() };
        let s = generate_scene(3, &cfg).unwrap();
        assert_eq!(s.bones.iter().map(|b| b.primitives.len()).sum::<usize>(), 8);
        let t = generate_scene(99, &cfg).unwrap();
        assert_eq!(s.bones, t.bones);
    }

    #[test]
    fn same_seed_same_scene() {
        let cfg = PhantomConfig::default();
        assert_eq!(generate_scene(11, &cfg).unwrap(), generate_scene(11, &cfg).unwrap());
        assert_ne!(generate_scene(11, &cfg).unwrap().bones, generate_scene(12, &cfg).unwrap().bones);
    }

    #[test]
    fn femur_capsule_centre_is_femur() {
        let s = generate_scene(5, &PhantomConfig::default()).unwrap();
        let Primitive::Capsule { a, b, .. } = &s.bone(BoneClass::Femur).unwrap().primitives[0] else {
            panic!("femur shaft should be a capsule")
        };
        let c = Point3::new((a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0, (a[2] + b[2]) / 2.0);
        assert_eq!(occupancy_oracle(&s, &c).argmax(), 2);
        assert_eq!(occupancy_oracle(&s, &Point3::new(5.0, 5.0, 5.0)).argmax(), 0);
    }

    #[test]
    fn impossible_clearance_reports_seed() {
        let cfg = PhantomConfig { clearance: 0.5, max_attempts: 3, ..Default::default() };
        match generate_scene(42, &cfg) {
            Err(Error::Phantom { seed, .. }) => assert_eq!(seed, 42),
            other => panic!("expected placement failure, got {other:?}"),
        }
    }

    #[test]
    fn vacuum_volume_is_zero() {
        let v = density_volume(&PhantomScene::empty(), 16).unwrap();
        assert!(v.data.iter().all(|&x| x == 0.0));
    }
}
