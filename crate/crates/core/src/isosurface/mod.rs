//! Dense field evaluation and marching-cubes surface extraction.
//!
//! Cube corners are numbered `0:(0,0,0) 1:(1,0,0) 2:(1,1,0) 3:(0,1,0)
//! 4:(0,0,1) 5:(1,0,1) 6:(1,1,1) 7:(0,1,1)` in `(x, y, z)` offsets; edges follow
//! [`EDGES`]. The case table was produced by walking each cube face
//! counter-clockwise (seen from outside) and joining, for every run of inside
//! corners, the edge where the run begins to the edge where it ends. Adjacent
//! cubes therefore always agree on how a shared face is cut, ambiguous faces
//! included. Each resulting polygon is triangulated without any diagonal
//! between two vertices of one face (such a diagonal could be duplicated by
//! the neighbouring cube), so every surface that avoids the grid boundary is
//! a closed 2-manifold.

mod mesh;
mod table;

pub use mesh::TriangleMesh;

use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use biplanar_tensor::no_grad;

use crate::drr::ProjectionImage;
use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::models::{enhance_image, SegNet, StudentNet, ViewInput};
use crate::occupancy::{BoneClass, OccupancyVector};

pub const CORNERS: [[usize; 3]; 8] =
    [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]];

pub const EDGES: [[usize; 2]; 12] =
    [[0, 1], [1, 2], [2, 3], [3, 0], [4, 5], [5, 6], [6, 7], [7, 4], [0, 4], [1, 5], [2, 6], [3, 7]];

/// Triangles (as edge triples) for one corner configuration.
pub fn case_triangles(case: u8) -> &'static [[u8; 3]] {
    table::TRIANGLES[case as usize]
}

/// Scalar samples on a node lattice; `x` varies fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarGrid {
    pub dims: [usize; 3],
    pub origin: Point3,
    pub spacing: [f64; 3],
    pub values: Vec<f64>,
}

impl ScalarGrid {
    pub fn new(dims: [usize; 3], origin: Point3, spacing: [f64; 3], values: Vec<f64>) -> Result<Self> {
        if values.len() != dims.iter().product::<usize>() {
            return Err(Error::Isosurface(format!("grid {dims:?} does not match {} values", values.len())));
        }
        if spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Isosurface(format!("grid spacing must be positive, got {spacing:?}")));
        }
        Ok(Self { dims, origin, spacing, values })
    }

    /// Nodes `-1 + 2 i / (r - 1)` along each axis.
    pub fn unit_cube(r: usize, values: Vec<f64>) -> Result<Self> {
        let h = 2.0 / (r as f64 - 1.0);
        Self::new([r; 3], Point3::new(-1.0, -1.0, -1.0), [h; 3], values)
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> Point3 {
        Point3::new(
            self.origin.x + self.spacing[0] * i as f64,
            self.origin.y + self.spacing[1] * j as f64,
            self.origin.z + self.spacing[2] * k as f64,
        )
    }

    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[(k * self.dims[1] + j) * self.dims[0] + i]
    }
}

/// Crossings are kept this fraction of an edge away from lattice nodes so no
/// triangle collapses to a point and cleanup never opens the surface.
pub const NODE_MARGIN: f64 = 1e-3;

/// Point at parameter `t` along `a -> b`, with `t` kept off the end nodes.
pub fn edge_point(a: Point3, b: Point3, t: f64) -> Point3 {
    a + t.clamp(NODE_MARGIN, 1.0 - NODE_MARGIN) * (b - a)
}

/// Linear interpolation of the iso crossing between two nodes.
pub fn linear_crossing(a: Point3, va: f64, b: Point3, vb: f64, iso: f64) -> Point3 {
    edge_point(a, b, (iso - va) / (vb - va))
}

/// Marching cubes with linear edge interpolation; nodes with value `> iso` are inside.
pub fn marching_cubes(grid: &ScalarGrid, iso: f64) -> Result<TriangleMesh> {
    if !(iso > 0.0 && iso < 1.0) {
        return Err(Error::Isosurface(format!("iso level must lie in (0, 1), got {iso}")));
    }
    marching_cubes_with(grid, iso, |a, va, b, vb| linear_crossing(a, va, b, vb, iso))
}

/// Marching cubes with a caller-supplied edge locator `(a, value_a, b, value_b) -> crossing`.
/// The locator is called once per cut lattice edge with `a` the lower node.
pub fn marching_cubes_with(
    grid: &ScalarGrid,
    iso: f64,
    mut locate: impl FnMut(Point3, f64, Point3, f64) -> Point3,
) -> Result<TriangleMesh> {
    if !iso.is_finite() {
        return Err(Error::Isosurface(format!("iso level must be finite, got {iso}")));
    }
    let [nx, ny, nz] = grid.dims;
    let mut mesh = TriangleMesh::default();
    if nx < 2 || ny < 2 || nz < 2 {
        return Ok(mesh);
    }
    let mut vertex_of_edge: HashMap<usize, u32> = HashMap::new();
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let mut case = 0u8;
                for (c, off) in CORNERS.iter().enumerate() {
                    if grid.value(i + off[0], j + off[1], k + off[2]) > iso {
                        case |= 1 << c;
                    }
                }
                let tris = case_triangles(case);
                if tris.is_empty() {
                    continue;
                }
                for tri in tris {
                    let ids = tri.map(|e| {
                        let [ca, cb] = EDGES[e as usize];
                        let (oa, ob) = (CORNERS[ca], CORNERS[cb]);
                        let lo = [oa[0].min(ob[0]), oa[1].min(ob[1]), oa[2].min(ob[2])];
                        let hi = [oa[0].max(ob[0]), oa[1].max(ob[1]), oa[2].max(ob[2])];
                        let axis = (0..3).find(|&d| lo[d] != hi[d]).expect("edge spans one axis");
                        let (li, lj, lk) = (i + lo[0], j + lo[1], k + lo[2]);
                        let key = ((lk * ny + lj) * nx + li) * 3 + axis;
                        *vertex_of_edge.entry(key).or_insert_with(|| {
                            let (hi_i, hi_j, hi_k) = (i + hi[0], j + hi[1], k + hi[2]);
                            let p = locate(
                                grid.node(li, lj, lk),
                                grid.value(li, lj, lk),
                                grid.node(hi_i, hi_j, hi_k),
                                grid.value(hi_i, hi_j, hi_k),
                            );
                            mesh.vertices.push(p);
                            (mesh.vertices.len() - 1) as u32
                        })
                    });
                    mesh.triangles.push(ids);
                }
            }
        }
    }
    mesh.remove_degenerate(1e-12);
    Ok(mesh)
}

/// Per-class probabilities on the `R^3` node lattice over `[-1, 1]^3`, `x` fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrid {
    pub resolution: usize,
    pub probs: Vec<OccupancyVector>,
}

impl FieldGrid {
    pub fn channel(&self, class: usize) -> Result<ScalarGrid> {
        ScalarGrid::unit_cube(self.resolution, self.probs.iter().map(|p| p.0[class]).collect())
    }
}

/// World coordinate of lattice node `(i, j, k)` at resolution `r`.
pub fn grid_node(r: usize, i: usize, j: usize, k: usize) -> Point3 {
    let h = 2.0 / (r as f64 - 1.0);
    Point3::new(-1.0 + h * i as f64, -1.0 + h * j as f64, -1.0 + h * k as f64)
}

/// Evaluates `predictor` on every lattice node in chunks of at most `chunk` points.
pub fn evaluate_grid(
    predictor: &mut dyn FnMut(&[Point3]) -> Result<Vec<OccupancyVector>>,
    resolution: usize,
    chunk: usize,
) -> Result<FieldGrid> {
    if resolution < 8 {
        return Err(Error::Isosurface(format!("grid resolution must be >= 8, got {resolution}")));
    }
    if chunk == 0 {
        return Err(Error::Isosurface("chunk size must be positive".into()));
    }
    let r = resolution;
    let total = r * r * r;
    let mut probs = Vec::with_capacity(total);
    let mut pts = Vec::with_capacity(chunk);
    let mut start = 0;
    while start < total {
        let end = (start + chunk).min(total);
        pts.clear();
        for n in start..end {
            pts.push(grid_node(r, n % r, (n / r) % r, n / (r * r)));
        }
        let out = predictor(&pts).map_err(|e| {
            let (i, j, k) = (start % r, (start / r) % r, start / (r * r));
            Error::Isosurface(format!("predictor failed on chunk starting at node ({i}, {j}, {k}): {e}"))
        })?;
        if out.len() != pts.len() {
            return Err(Error::Isosurface(format!(
                "predictor returned {} vectors for {} points",
                out.len(),
                pts.len()
            )));
        }
        check_probabilities(&out).map_err(|e| Error::Isosurface(format!("chunk starting at node {start}: {e}")))?;
        probs.extend(out);
        start = end;
    }
    Ok(FieldGrid { resolution, probs })
}

/// One mesh per bone class, extracted independently from its probability channel.
pub fn extract_bones(field: &FieldGrid, iso: f64) -> Result<Vec<(BoneClass, TriangleMesh)>> {
    BoneClass::ALL
        .iter()
        .map(|&c| Ok((c, marching_cubes(&field.channel(c.index())?, iso)?.with_class(c))))
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub enhance_s: f64,
    pub encode_s: f64,
    pub field_s: f64,
    pub extract_s: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.enhance_s + self.encode_s + self.field_s + self.extract_s
    }
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub meshes: Vec<(BoneClass, TriangleMesh)>,
    pub timings: StageTimings,
}

/// Field evaluation plus per-bone extraction for an arbitrary predictor.
pub fn reconstruct_with(
    predictor: &mut dyn FnMut(&[Point3]) -> Result<Vec<OccupancyVector>>,
    resolution: usize,
    chunk: usize,
    iso: f64,
) -> Result<Reconstruction> {
    let t0 = Instant::now();
    let field = evaluate_grid(predictor, resolution, chunk)?;
    let t1 = Instant::now();
    let meshes = extract_bones(&field, iso)?;
    let timings = StageTimings {
        field_s: (t1 - t0).as_secs_f64(),
        extract_s: t1.elapsed().as_secs_f64(),
        ..Default::default()
    };
    Ok(Reconstruction { meshes, timings })
}

/// Full biplanar inference: enhance both radiographs, encode them, evaluate
/// the student's field on an `R^3` lattice and extract every bone at `iso`.
#[allow(clippy::too_many_arguments)]
pub fn reconstruct_all(
    student: &StudentNet,
    segnet: &SegNet,
    views: &[ProjectionImage],
    w_m: f64,
    mask_threshold: f64,
    resolution: usize,
    chunk: usize,
    iso: f64,
) -> Result<Reconstruction> {
    let stage = |name: &'static str| move |e: Error| Error::Isosurface(format!("{name} stage: {e}"));
    let _g = no_grad();
    let t0 = Instant::now();
    let inputs = views
        .iter()
        .map(|img| Ok(ViewInput { image: img.clone(), enhanced: enhance_image(segnet, img, w_m, mask_threshold)? }))
        .collect::<Result<Vec<_>>>()
        .map_err(stage("enhance"))?;
    let t1 = Instant::now();
    let cache = student.encode(&inputs).and_then(|enc| student.prepare_inference(&enc)).map_err(stage("encode"))?;
    let t2 = Instant::now();
    let field = evaluate_grid(&mut |pts| cache.probabilities(pts), resolution, chunk).map_err(stage("field"))?;
    let t3 = Instant::now();
    let meshes = extract_bones(&field, iso).map_err(stage("extract"))?;
    let timings = StageTimings {
        enhance_s: (t1 - t0).as_secs_f64(),
        encode_s: (t2 - t1).as_secs_f64(),
        field_s: (t3 - t2).as_secs_f64(),
        extract_s: t3.elapsed().as_secs_f64(),
    };
    Ok(Reconstruction { meshes, timings })
}

fn check_probabilities(v: &[OccupancyVector]) -> Result<()> {
    for (n, p) in v.iter().enumerate() {
        if (p.sum() - 1.0).abs() > 1e-6 || p.0.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::Isosurface(format!("node {n}: not a probability vector {:?}", p.0)));
        }
    }
    Ok(())
}
