use std::collections::HashMap;

use crate::geometry::{Point3, Vec3};
use crate::occupancy::BoneClass;

/// Indexed triangle surface; triangles are counter-clockwise seen from outside.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[u32; 3]>,
    pub class: Option<BoneClass>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point3>, triangles: Vec<[u32; 3]>) -> Self {
        Self { vertices, triangles, class: None }
    }

    pub fn with_class(mut self, class: BoneClass) -> Self {
        self.class = Some(class);
        self
    }

    /// Closed 12-triangle axis-aligned box.
    pub fn axis_box(min: Point3, max: Point3) -> Self {
        let vertices = (0..8)
            .map(|c| {
                Point3::new(
                    if c & 1 == 0 { min.x } else { max.x },
                    if c & 2 == 0 { min.y } else { max.y },
                    if c & 4 == 0 { min.z } else { max.z },
                )
            })
            .collect();
        let quads = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
        let triangles = quads.iter().flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]).collect();
        Self::new(vertices, triangles)
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, t: usize) -> [Point3; 3] {
        self.triangles[t].map(|i| self.vertices[i as usize])
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Enclosed volume by the divergence theorem (positive for outward winding).
    pub fn volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.corners(t);
                a.coords.dot(&b.coords.cross(&c.coords)) / 6.0
            })
            .sum()
    }

    pub fn indices_valid(&self) -> bool {
        let n = self.vertices.len() as u32;
        self.triangles.iter().all(|t| t.iter().all(|&i| i < n))
    }

    fn edge_counts(&self) -> HashMap<(u32, u32), usize> {
        let mut m = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *m.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        m
    }

    /// Every undirected edge is shared by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        !self.triangles.is_empty() && self.edge_counts().values().all(|&c| c == 2)
    }

    /// Every directed edge is matched by its reverse exactly once.
    pub fn is_consistently_oriented(&self) -> bool {
        let mut m: HashMap<(u32, u32), i64> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                if a < b {
                    *m.entry((a, b)).or_insert(0) += 1;
                } else {
                    *m.entry((b, a)).or_insert(0) -= 1;
                }
            }
        }
        m.values().all(|&v| v == 0)
    }

    /// `V - E + F` over referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &i in t {
                used[i as usize] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - self.edge_counts().len() as i64 + self.triangles.len() as i64
    }

    pub fn translated(&self, d: Vec3) -> TriangleMesh {
        TriangleMesh { vertices: self.vertices.iter().map(|p| p + d).collect(), ..self.clone() }
    }

    /// Drops triangles with area `<= min_area` (or repeated indices) and then
    /// vertices no longer referenced, preserving relative order.
    pub fn remove_degenerate(&mut self, min_area: f64) {
        let keep: Vec<[u32; 3]> = (0..self.triangles.len())
            .filter(|&t| {
                let [a, b, c] = self.triangles[t];
                a != b && b != c && a != c && self.triangle_area(t) > min_area
            })
            .map(|t| self.triangles[t])
            .collect();
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut verts = Vec::new();
        let mut tris = Vec::with_capacity(keep.len());
        for t in keep {
            tris.push(t.map(|i| {
                let slot = &mut remap[i as usize];
                if *slot == u32::MAX {
                    *slot = verts.len() as u32;
                    verts.push(self.vertices[i as usize]);
                }
                *slot
            }));
        }
        self.vertices = verts;
        self.triangles = tris;
    }
}
