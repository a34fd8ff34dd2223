//! Surface-distance and volume-overlap scores for reconstructed bones.

mod kdtree;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::isosurface::TriangleMesh;

pub use kdtree::KdTree;

/// Default sample count per surface (2^14).
pub const DEFAULT_SAMPLES: usize = 16384;
/// The literal count quoted for the clinical evaluation; accepted as an alternative.
pub const LEGACY_SAMPLES: usize = 16348;
/// Largest fraction of voxel rows allowed to see an odd number of surface crossings.
pub const MAX_ODD_ROW_FRACTION: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    pub samples: usize,
    pub dsc_resolution: usize,
    pub sample_seed: u64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { samples: DEFAULT_SAMPLES, dsc_resolution: 256, sample_seed: 0 }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.dsc_resolution < 2 {
            return Err(Error::Config(format!(
                "metrics need samples >= 1 and dsc_resolution >= 2, got {} and {}",
                self.samples, self.dsc_resolution
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    /// Seed of the sampler that produced the cloud, if sampled.
    pub seed: Option<u64>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self { points, seed: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Area-weighted uniform samples on the surface of `mesh`.
pub fn sample_surface_points(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::Metrics("sample count must be at least 1".into()));
    }
    if !mesh.indices_valid() {
        return Err(Error::Metrics("mesh has out-of-range vertex indices".into()));
    }
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        total += mesh.triangle_area(t);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::Metrics("cannot sample an empty mesh".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let target = rng.random::<f64>() * total;
        let t = cumulative.partition_point(|&c| c <= target).min(cumulative.len() - 1);
        let (r1, r2): (f64, f64) = (rng.random(), rng.random());
        let s = r1.sqrt();
        let [a, b, c] = mesh.corners(t);
        let p = a.coords * (1.0 - s) + b.coords * (s * (1.0 - r2)) + c.coords * (s * r2);
        points.push(Point3::from(p));
    }
    Ok(PointCloud { points, seed: Some(seed) })
}

/// Distance from each query point to the nearest point of `target`.
pub fn directed_distances(queries: &[Point3], target: &PointCloud) -> Result<Vec<f64>> {
    if target.is_empty() {
        return Err(Error::Metrics("distance to an empty point cloud".into()));
    }
    let tree = KdTree::new(&target.points);
    Ok(queries.iter().map(|q| tree.nearest_distance(q)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceDistance {
    pub assd_mm: f64,
    pub hd_mm: f64,
}

/// Average symmetric surface distance and Hausdorff distance, scaled to mm.
///
/// ASSD averages the nearest-neighbour distances of both directions over the
/// union of the two clouds.
pub fn surface_distance(pred: &PointCloud, gt: &PointCloud, mm_per_unit: f64) -> Result<SurfaceDistance> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::Metrics("surface distance needs two non-empty clouds".into()));
    }
    if !(mm_per_unit > 0.0 && mm_per_unit.is_finite()) {
        return Err(Error::Metrics(format!("mm scale must be positive, got {mm_per_unit}")));
    }
    let forward = directed_distances(&pred.points, gt)?;
    let backward = directed_distances(&gt.points, pred)?;
    Ok(reduce_distances(&forward, &backward, mm_per_unit))
}

/// Same as [`surface_distance`] with an `O(N M)` scan; reference for the index.
pub fn surface_distance_brute_force(pred: &PointCloud, gt: &PointCloud, mm_per_unit: f64) -> Result<SurfaceDistance> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::Metrics("surface distance needs two non-empty clouds".into()));
    }
    let scan = |qs: &[Point3], ts: &[Point3]| -> Vec<f64> {
        qs.iter()
            .map(|q| {
                let q = [q.x, q.y, q.z];
                ts.iter().map(|t| kdtree::dist2(&[t.x, t.y, t.z], &q)).fold(f64::INFINITY, f64::min).sqrt()
            })
            .collect()
    };
    Ok(reduce_distances(&scan(&pred.points, &gt.points), &scan(&gt.points, &pred.points), mm_per_unit))
}

fn reduce_distances(forward: &[f64], backward: &[f64], mm_per_unit: f64) -> SurfaceDistance {
    let sum: f64 = forward.iter().sum::<f64>() + backward.iter().sum::<f64>();
    let assd = sum / (forward.len() + backward.len()) as f64;
    let hd = forward.iter().chain(backward).copied().fold(0.0, f64::max);
    SurfaceDistance { assd_mm: assd * mm_per_unit, hd_mm: hd * mm_per_unit }
}

/// `R^3` occupancy over `[-1, 1]^3`, `x` fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryVolume {
    pub resolution: usize,
    pub data: Vec<bool>,
}

impl BinaryVolume {
    pub fn empty(resolution: usize) -> Self {
        Self { resolution, data: vec![false; resolution.pow(3)] }
    }

    pub fn index(&self, k: usize, j: usize, i: usize) -> usize {
        (k * self.resolution + j) * self.resolution + i
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// World coordinate of voxel centre `i` along any axis.
    pub fn center(resolution: usize, i: usize) -> f64 {
        -1.0 + (i as f64 + 0.5) * 2.0 / resolution as f64
    }
}

/// Edge function for the `(y, z)` projection, evaluated with the endpoints in
/// a canonical order so two triangles sharing an edge see the same value up to
/// sign.
fn edge_function(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    let (lo, hi, sign) = if (a[0], a[1]) <= (b[0], b[1]) { (a, b, 1.0) } else { (b, a, -1.0) };
    sign * ((hi[0] - lo[0]) * (p[1] - lo[1]) - (hi[1] - lo[1]) * (p[0] - lo[0]))
}

/// Tie rule for points exactly on an edge of a counter-clockwise triangle:
/// exactly one of the two directions of any edge owns it.
fn owns_edge(a: [f64; 2], b: [f64; 2]) -> bool {
    let (dy, dz) = (b[0] - a[0], b[1] - a[1]);
    dz > 0.0 || (dz == 0.0 && dy < 0.0)
}

/// Voxelises a closed mesh by counting `+x` ray crossings through voxel centres.
pub fn voxelize(mesh: &TriangleMesh, resolution: usize) -> Result<BinaryVolume> {
    if resolution < 2 {
        return Err(Error::Metrics(format!("voxel resolution must be >= 2, got {resolution}")));
    }
    if !mesh.indices_valid() {
        return Err(Error::Metrics("mesh has out-of-range vertex indices".into()));
    }
    let r = resolution;
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); r * r];
    let cell = 2.0 / r as f64;
    // Continuous row coordinate for a world position along y or z.
    let to_row = |w: f64| (w + 1.0) / cell - 0.5;
    for tri in &mesh.triangles {
        let p = tri.map(|i| mesh.vertices[i as usize]);
        let mut q = p.map(|v| [v.y, v.z]);
        let mut xs = p.map(|v| v.x);
        let area = edge_function(q[0], q[1], q[2]);
        if area == 0.0 {
            continue;
        }
        if area < 0.0 {
            q.swap(1, 2);
            xs.swap(1, 2);
        }
        let (ymin, ymax) = q.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v[0]), b.max(v[0])));
        let (zmin, zmax) = q.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v[1]), b.max(v[1])));
        let j0 = to_row(ymin).ceil().max(0.0) as usize;
        let j1 = (to_row(ymax).floor() as i64).min(r as i64 - 1);
        let k0 = to_row(zmin).ceil().max(0.0) as usize;
        let k1 = (to_row(zmax).floor() as i64).min(r as i64 - 1);
        if j1 < 0 || k1 < 0 {
            continue;
        }
        for k in k0..=k1 as usize {
            for j in j0..=j1 as usize {
                let s = [BinaryVolume::center(r, j), BinaryVolume::center(r, k)];
                let mut w = [0.0; 3];
                let mut inside = true;
                for e in 0..3 {
                    let (a, b) = (q[(e + 1) % 3], q[(e + 2) % 3]);
                    w[e] = edge_function(a, b, s);
                    if w[e] < 0.0 || (w[e] == 0.0 && !owns_edge(a, b)) {
                        inside = false;
                        break;
                    }
                }
                if inside {
                    let sum = w[0] + w[1] + w[2];
                    rows[k * r + j].push((w[0] * xs[0] + w[1] * xs[1] + w[2] * xs[2]) / sum);
                }
            }
        }
    }
    let mut vol = BinaryVolume::empty(r);
    let mut odd = 0usize;
    for (row, crossings) in rows.iter_mut().enumerate() {
        if crossings.len() % 2 == 1 {
            odd += 1;
            continue;
        }
        crossings.sort_by(f64::total_cmp);
        let (k, j) = (row / r, row % r);
        for pair in crossings.chunks(2) {
            for i in 0..r {
                let x = BinaryVolume::center(r, i);
                if x > pair[0] && x < pair[1] {
                    let idx = vol.index(k, j, i);
                    vol.data[idx] ^= true;
                }
            }
        }
    }
    if odd as f64 > MAX_ODD_ROW_FRACTION * (r * r) as f64 {
        return Err(Error::Metrics(format!(
            "mesh is not watertight: {odd} of {} voxel rows cross the surface an odd number of times",
            r * r
        )));
    }
    Ok(vol)
}

/// Dice overlap in percent of two binary volumes.
pub fn dice(pred: &BinaryVolume, gt: &BinaryVolume) -> Result<f64> {
    if pred.resolution != gt.resolution {
        return Err(Error::Metrics(format!("resolution mismatch {} vs {}", pred.resolution, gt.resolution)));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        return Err(Error::Metrics("both volumes are empty; overlap is undefined".into()));
    }
    Ok(100.0 * (2 * tp) as f64 / denom as f64)
}

/// Dice overlap of two closed meshes voxelised at `resolution`.
pub fn dsc(pred: &TriangleMesh, gt: &TriangleMesh, resolution: usize) -> Result<f64> {
    dice(&voxelize(pred, resolution)?, &voxelize(gt, resolution)?)
}

/// Per-bone scores in the layout of the evaluation CSV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoneScores {
    pub assd_mm: f64,
    pub hd_mm: f64,
    pub dsc_pct: f64,
}

/// All three scores for one predicted/reference mesh pair. Both surfaces are
/// sampled with the same seed, so identical meshes score exactly `(0, 0, 100)`.
pub fn score_meshes(pred: &TriangleMesh, gt: &TriangleMesh, cfg: &MetricConfig, mm_per_unit: f64) -> Result<BoneScores> {
    cfg.validate()?;
    let p = sample_surface_points(pred, cfg.samples, cfg.sample_seed)?;
    let g = sample_surface_points(gt, cfg.samples, cfg.sample_seed)?;
    let sd = surface_distance(&p, &g, mm_per_unit)?;
    Ok(BoneScores { assd_mm: sd.assd_mm, hd_mm: sd.hd_mm, dsc_pct: dsc(pred, gt, cfg.dsc_resolution)? })
}

/// Distance in mm from each vertex of `mesh` to the reference cloud, for
/// external error colouring.
pub fn vertex_distances(mesh: &TriangleMesh, reference: &PointCloud, mm_per_unit: f64) -> Result<Vec<f64>> {
    Ok(directed_distances(&mesh.vertices, reference)?.into_iter().map(|d| d * mm_per_unit).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_points() {
        let a = PointCloud::new(vec![Point3::new(0.0, 0.0, 0.0)]);
        let b = PointCloud::new(vec![Point3::new(0.3, 0.4, 0.0)]);
        let d = surface_distance(&a, &b, 1.0).unwrap();
        assert!((d.assd_mm - 0.5).abs() < 1e-15 && (d.hd_mm - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_inputs_rejected() {
        let a = PointCloud::new(vec![]);
        let b = PointCloud::new(vec![Point3::origin()]);
        assert!(surface_distance(&a, &b, 1.0).is_err());
        assert!(sample_surface_points(&TriangleMesh::default(), 10, 0).is_err());
        assert!(dice(&BinaryVolume::empty(4), &BinaryVolume::empty(4)).is_err());
    }

    #[test]
    fn edge_ownership_is_exclusive() {
        let a = [0.0, 0.0];
        for b in [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.5], [0.3, -2.0]] {
            assert_ne!(owns_edge(a, b), owns_edge(b, a));
        }
    }
}
