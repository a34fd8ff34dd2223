//! Cone-beam camera conventions shared by the renderer and the student network.
//!
//! World frame: `z` is the vertical (long-bone) axis, anatomy lives in
//! `[-1, 1]^3`. A view at gantry angle `theta` looks along
//! `d = (-sin theta, cos theta, 0)`; the source sits at `-SAD * d` and the
//! detector plane is `d . x = SDD - SAD`. Detector columns follow
//! `e_u = (cos theta, sin theta, 0)` and rows grow downwards, `e_v = (0, 0, -1)`.

use biplanar_tensor::ops::{gather2d, gather3d, reshape};
use biplanar_tensor::Tensor;
use nalgebra::{Point3 as NPoint3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = NPoint3<f64>;
pub type Vec3 = Vector3<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    Ap,
    Rl,
    Angle(f64),
}

impl View {
    pub fn angle_deg(self) -> f64 {
        match self {
            View::Ap => 0.0,
            View::Rl => 90.0,
            View::Angle(a) => a,
        }
    }

    pub fn label(self) -> String {
        match self {
            View::Ap => "ap".into(),
            View::Rl => "rl".into(),
            View::Angle(a) => format!("deg{a}"),
        }
    }
}

/// Scene-independent detector settings; see [`CameraGeometry::from_config`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub source_to_axis: f64,
    pub source_to_detector: f64,
    /// Square detector side in pixels.
    pub detector_px: usize,
    /// Physical detector side in world units; the pitch is `detector_size / detector_px`.
    pub detector_size: f64,
    pub views: [View; 2],
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            source_to_axis: 10.0,
            source_to_detector: 15.0,
            detector_px: 128,
            detector_size: 3.5,
            views: [View::Ap, View::Rl],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraGeometry {
    pub view: View,
    pub source_to_axis: f64,
    pub source_to_detector: f64,
    pub width: usize,
    pub height: usize,
    pub pixel_pitch: f64,
    /// Pixel coordinates `(u, v)` where the central ray hits the detector.
    pub principal_point: [f64; 2],
}

/// Half-diagonal of `[-1, 1]^3`.
const WORLD_HALF_DIAGONAL: f64 = 1.732_050_807_568_877_2;

impl CameraGeometry {
    pub fn new(view: View, source_to_axis: f64, source_to_detector: f64, size_px: usize, pitch: f64) -> Result<Self> {
        let g = Self {
            view,
            source_to_axis,
            source_to_detector,
            width: size_px,
            height: size_px,
            pixel_pitch: pitch,
            principal_point: [(size_px as f64 - 1.0) / 2.0, (size_px as f64 - 1.0) / 2.0],
        };
        g.validate()?;
        Ok(g)
    }

    pub fn from_config(cfg: &GeometryConfig, view: View) -> Result<Self> {
        if cfg.detector_px == 0 {
            return Err(Error::Geometry("detector must have at least one pixel".into()));
        }
        Self::new(
            view,
            cfg.source_to_axis,
            cfg.source_to_detector,
            cfg.detector_px,
            cfg.detector_size / cfg.detector_px as f64,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.source_to_axis > WORLD_HALF_DIAGONAL
            && self.source_to_detector > self.source_to_axis
            && self.pixel_pitch > 0.0
            && self.width > 0
            && self.height > 0
            && self.view.angle_deg().is_finite()
            && self.principal_point.iter().all(|c| c.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Geometry(format!(
                "need source-to-detector > source-to-axis > {WORLD_HALF_DIAGONAL:.3}, positive pitch and extents; got {self:?}"
            )))
        }
    }

    /// Unit viewing direction from the source through the rotation axis.
    pub fn direction(&self) -> Vec3 {
        let t = self.view.angle_deg().to_radians();
        Vec3::new(-t.sin(), t.cos(), 0.0)
    }

    pub fn axis_u(&self) -> Vec3 {
        let t = self.view.angle_deg().to_radians();
        Vec3::new(t.cos(), t.sin(), 0.0)
    }

    pub fn axis_v(&self) -> Vec3 {
        Vec3::new(0.0, 0.0, -1.0)
    }

    pub fn source(&self) -> Point3 {
        Point3::from(-self.source_to_axis * self.direction())
    }

    /// World position of the (continuous) pixel on the detector plane.
    pub fn pixel_to_world(&self, px: PixelCoord) -> Point3 {
        let du = (px.u - self.principal_point[0]) * self.pixel_pitch;
        let dv = (px.v - self.principal_point[1]) * self.pixel_pitch;
        self.source() + self.source_to_detector * self.direction() + du * self.axis_u() + dv * self.axis_v()
    }
}

pub fn project_point(geom: &CameraGeometry, p: &Point3) -> Result<PixelCoord> {
    if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
        return Err(Error::Geometry(format!("non-finite point {p:?}")));
    }
    let rel = p - geom.source();
    let depth = geom.direction().dot(&rel);
    if depth <= 1e-12 * geom.source_to_axis {
        return Err(Error::Geometry(format!("point {p:?} lies behind the source plane")));
    }
    let t = geom.source_to_detector / depth;
    Ok(PixelCoord {
        u: geom.principal_point[0] + t * geom.axis_u().dot(&rel) / geom.pixel_pitch,
        v: geom.principal_point[1] + t * geom.axis_v().dot(&rel) / geom.pixel_pitch,
    })
}

/// Distance from `p` to the detector plane divided by the source-to-detector
/// distance: 0 on the detector, 1 at the source.
pub fn view_depth(geom: &CameraGeometry, p: &Point3) -> f64 {
    let plane_offset = geom.source_to_detector - geom.source_to_axis;
    (plane_offset - geom.direction().dot(&p.coords)) / geom.source_to_detector
}

/// Multilinear interpolation of a `[C, H, W]` or `[C, D, H, W]` grid at one
/// continuous index coordinate (`(row, col)` or `(z, y, x)`), clamped to the border.
pub fn interp(grid: &Tensor, coord: &[f64]) -> Result<Tensor> {
    let out = match (grid.shape().len(), coord) {
        (3, &[r, c]) => gather2d(grid, &[[r, c]])?,
        (4, &[z, y, x]) => gather3d(grid, &[[z, y, x]])?,
        _ => {
            return Err(Error::Geometry(format!(
                "interp: grid {:?} incompatible with {}-d coordinate",
                grid.shape(),
                coord.len()
            )))
        }
    };
    let c = grid.shape()[0];
    Ok(reshape(&out, &[c])?)
}
