use biplanar_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point3;

/// Voxel grid in attenuation units.
///
/// `extents` is `(D, H, W)` = `(z, y, x)` counts with `x` varying fastest in
/// `data`; `spacing` and `origin` are in world `(x, y, z)` order, `origin`
/// being the centre of voxel `(0, 0, 0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume3D {
    pub extents: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub data: Vec<f64>,
}

/// Everything except the voxel values; this is the JSON sidecar on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    pub extents: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Volume3D {
    pub fn new(extents: [usize; 3], spacing: [f64; 3], origin: [f64; 3], data: Vec<f64>) -> Result<Self> {
        let n: usize = extents.iter().product();
        if n == 0 || data.len() != n {
            return Err(Error::Format(format!("volume extents {extents:?} do not match {} values", data.len())));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Format(format!("volume spacing must be positive, got {spacing:?}")));
        }
        Ok(Self { extents, spacing, origin, data })
    }

    /// `r^3` zero volume whose voxel centres tile `[-1, 1]^3`.
    pub fn cube(r: usize) -> Self {
        let s = 2.0 / r as f64;
        let o = -1.0 + s / 2.0;
        Self { extents: [r; 3], spacing: [s; 3], origin: [o; 3], data: vec![0.0; r * r * r] }
    }

    pub fn header(&self) -> VolumeHeader {
        VolumeHeader { extents: self.extents, spacing: self.spacing, origin: self.origin }
    }

    pub fn index(&self, k: usize, j: usize, i: usize) -> usize {
        (k * self.extents[1] + j) * self.extents[2] + i
    }

    pub fn voxel_center(&self, k: usize, j: usize, i: usize) -> Point3 {
        Point3::new(
            self.origin[0] + self.spacing[0] * i as f64,
            self.origin[1] + self.spacing[1] * j as f64,
            self.origin[2] + self.spacing[2] * k as f64,
        )
    }

    /// Continuous `(z, y, x)` index coordinate of a world point.
    pub fn world_to_index(&self, p: &Point3) -> [f64; 3] {
        [
            (p.z - self.origin[2]) / self.spacing[2],
            (p.y - self.origin[1]) / self.spacing[1],
            (p.x - self.origin[0]) / self.spacing[0],
        ]
    }

    /// `[1, 1, D, H, W]` tensor sharing the voxel order.
    pub fn to_tensor(&self, scale: f64) -> Result<Tensor> {
        let [d, h, w] = self.extents;
        Ok(Tensor::new(self.data.iter().map(|v| v * scale).collect(), &[1, 1, d, h, w])?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_centres_span_the_domain() {
        let v = Volume3D::cube(4);
        assert_eq!(v.voxel_center(0, 0, 0), Point3::new(-0.75, -0.75, -0.75));
        assert_eq!(v.voxel_center(3, 3, 3), Point3::new(0.75, 0.75, 0.75));
        let idx = v.world_to_index(&Point3::new(0.25, -0.25, 0.75));
        assert_eq!(idx, [3.0, 1.0, 2.0]);
    }

    #[test]
    fn size_mismatch_rejected() {
        assert!(Volume3D::new([2, 2, 2], [1.0; 3], [0.0; 3], vec![0.0; 7]).is_err());
        assert!(Volume3D::new([2, 2, 2], [0.0, 1.0, 1.0], [0.0; 3], vec![0.0; 8]).is_err());
    }
}
