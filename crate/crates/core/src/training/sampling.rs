use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::isosurface::TriangleMesh;
use crate::metrics::sample_surface_points;
use crate::occupancy::OccupancyVector;
use crate::phantom::{occupancy_oracle, PhantomScene};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Labeled,
    Unlabeled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    pub points: Vec<Point3>,
    /// Present exactly when `provenance` is labeled.
    pub targets: Option<Vec<OccupancyVector>>,
    pub provenance: Provenance,
}

/// Point counts per scene and step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub n_surface: usize,
    pub n_uniform: usize,
    pub n_unlabeled: usize,
    /// Standard deviation of the near-surface perturbation, world units.
    pub sigma: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { n_surface: 2500, n_uniform: 2500, n_unlabeled: 5000, sigma: 0.03 }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_surface + self.n_uniform == 0 {
            return Err(Error::Config("labeled sampling needs at least one point".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sampling sigma must be >= 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

fn uniform_point(rng: &mut ChaCha8Rng) -> Point3 {
    Point3::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0))
}

/// Draws training points for one scene.
///
/// Labeled batches hold `n_surface` Gaussian-perturbed surface samples
/// (clamped to the cube) followed by `n_uniform` uniform points, all labeled
/// by the analytic oracle. Unlabeled batches hold `n_uniform` uniform points
/// and no targets.
pub fn sample_points(
    scene: &PhantomScene,
    meshes: Option<&[TriangleMesh]>,
    mode: Provenance,
    n_surface: usize,
    n_uniform: usize,
    sigma: f64,
    seed: u64,
) -> Result<SampleBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match mode {
        Provenance::Unlabeled => {
            let points = (0..n_uniform).map(|_| uniform_point(&mut rng)).collect();
            Ok(SampleBatch { points, targets: None, provenance: mode })
        }
        Provenance::Labeled => {
            let mut points = Vec::with_capacity(n_surface + n_uniform);
            if n_surface > 0 {
                let meshes = meshes.ok_or_else(|| Error::Training("labeled sampling needs ground-truth meshes".into()))?;
                let mut merged = TriangleMesh::default();
                for m in meshes {
                    let base = merged.vertices.len() as u32;
                    merged.vertices.extend_from_slice(&m.vertices);
                    merged.triangles.extend(m.triangles.iter().map(|t| t.map(|i| i + base)));
                }
                let surface = sample_surface_points(&merged, n_surface, rng.random())?;
                let noise = Normal::new(0.0, sigma).map_err(|e| Error::Training(e.to_string()))?;
                for p in surface.points {
                    let q = if sigma > 0.0 {
                        Point3::new(p.x + noise.sample(&mut rng), p.y + noise.sample(&mut rng), p.z + noise.sample(&mut rng))
                    } else {
                        p
                    };
                    points.push(q.map(|c| c.clamp(-1.0, 1.0)));
                }
            }
            points.extend((0..n_uniform).map(|_| uniform_point(&mut rng)));
            let targets = points.iter().map(|p| occupancy_oracle(scene, p)).collect();
            Ok(SampleBatch { points, targets: Some(targets), provenance: mode })
        }
    }
}
