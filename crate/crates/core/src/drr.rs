//! Cone-beam radiograph synthesis by ray marching the analytic phantom.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraGeometry, PixelCoord, Point3, Vec3};
use crate::phantom::{Material, PhantomScene};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageDomain {
    /// `L = integral of mu ds` per pixel.
    LineIntegral,
    /// Detector intensity `exp(-L)` in `[0, 1]`.
    Intensity,
    /// `clamp(-ln(I) / reference, 0, 1)`: the network input convention.
    LogNormalized,
}

/// Row-major `height x width` image.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
    pub geometry: CameraGeometry,
    pub domain: ImageDomain,
}

impl ProjectionImage {
    pub fn new(data: Vec<f64>, geometry: CameraGeometry, domain: ImageDomain) -> Result<Self> {
        let (width, height) = (geometry.width, geometry.height);
        if data.len() != width * height {
            return Err(Error::Drr(format!("{} values for a {width}x{height} detector", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Drr("image contains non-finite values".into()));
        }
        if domain != ImageDomain::LineIntegral && data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Drr(format!("{domain:?} image values must lie in [0, 1]")));
        }
        Ok(Self { width, height, data, geometry, domain })
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrrConfig {
    /// Ray-march step in world units.
    pub step: f64,
    pub photons: f64,
    pub sigma_e: f64,
    /// Line integral mapped to 1.0 by [`log_normalize`].
    pub log_reference: f64,
}

impl Default for DrrConfig {
    fn default() -> Self {
        Self { step: 0.01, photons: 1e5, sigma_e: 1e-3, log_reference: 0.5 }
    }
}

/// Parametric interval where the ray `o + t d` is inside `[-1, 1]^3`.
fn clip_to_cube(o: &Point3, d: &Vec3) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..3 {
        if d[i].abs() < 1e-300 {
            if o[i].abs() > 1.0 {
                return None;
            }
            continue;
        }
        let a = (-1.0 - o[i]) / d[i];
        let b = (1.0 - o[i]) / d[i];
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    let t0 = t0.max(0.0);
    (t1 > t0).then_some((t0, t1))
}

const MAX_REFINE: u32 = 12;

/// Midpoint rule on `[a, b]`; cells whose end points and midpoint disagree on
/// material are split so interfaces are resolved to `step / 2^12`.
#[allow(clippy::too_many_arguments)]
fn integrate_cell(
    mu: &dyn Fn(Material) -> f64,
    scene: &PhantomScene,
    o: &Point3,
    d: &Vec3,
    a: f64,
    ma: Material,
    b: f64,
    mb: Material,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let mm = scene.material(&(o + m * d));
    if (ma == mm && mm == mb) || depth >= MAX_REFINE {
        return mu(mm) * (b - a);
    }
    integrate_cell(mu, scene, o, d, a, ma, m, mm, depth + 1) + integrate_cell(mu, scene, o, d, m, mm, b, mb, depth + 1)
}

fn ray_integral(scene: &PhantomScene, mu: &dyn Fn(Material) -> f64, o: &Point3, d: &Vec3, step: f64) -> f64 {
    let Some((t0, t1)) = clip_to_cube(o, d) else { return 0.0 };
    let n = ((t1 - t0) / step).ceil().max(1.0) as usize;
    let h = (t1 - t0) / n as f64;
    let mut total = 0.0;
    let mut a = t0;
    let mut ma = scene.material(&(o + a * d));
    for s in 0..n {
        let b = if s + 1 == n { t1 } else { t0 + h * (s + 1) as f64 };
        let mb = scene.material(&(o + b * d));
        total += integrate_cell(mu, scene, o, d, a, ma, b, mb, 0);
        a = b;
        ma = mb;
    }
    total
}

fn trace(scene: &PhantomScene, geom: &CameraGeometry, step: f64, mu: &dyn Fn(Material) -> f64) -> Result<Vec<f64>> {
    geom.validate()?;
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Drr(format!("ray step must be positive, got {step}")));
    }
    let src = geom.source();
    let mut out = Vec::with_capacity(geom.width * geom.height);
    let mut any_hit = false;
    for row in 0..geom.height {
        for col in 0..geom.width {
            let pix = geom.pixel_to_world(PixelCoord { u: col as f64, v: row as f64 });
            let d = (pix - src).normalize();
            any_hit |= clip_to_cube(&src, &d).is_some();
            out.push(ray_integral(scene, mu, &src, &d, step));
        }
    }
    if !any_hit {
        return Err(Error::Drr("no detector ray crosses the [-1, 1]^3 volume".into()));
    }
    Ok(out)
}

/// Per-pixel attenuation line integrals along source-to-pixel rays.
pub fn line_integrals(scene: &PhantomScene, geom: &CameraGeometry, step: f64) -> Result<ProjectionImage> {
    let data = trace(scene, geom, step, &|m| scene.attenuation_of(m))?;
    ProjectionImage::new(data, geom.clone(), ImageDomain::LineIntegral)
}

/// Noiseless Beer-Lambert projection `exp(-L)`.
pub fn render_drr(scene: &PhantomScene, geom: &CameraGeometry, step: f64) -> Result<ProjectionImage> {
    let l = line_integrals(scene, geom, step)?;
    ProjectionImage::new(l.data.iter().map(|v| (-v).exp()).collect(), l.geometry, ImageDomain::Intensity)
}

/// Pixels whose ray crosses any bone (bone-only line integral `> 0`).
pub fn bone_mask(scene: &PhantomScene, geom: &CameraGeometry, step: f64) -> Result<Vec<bool>> {
    let data = trace(scene, geom, step, &|m| if matches!(m, Material::Bone(_)) { 1.0 } else { 0.0 })?;
    Ok(data.iter().map(|&v| v > 0.0).collect())
}

/// Quantum (Poisson) plus electronic (Gaussian) detector noise, in intensity units.
pub fn apply_noise(img: &ProjectionImage, photons_n0: f64, sigma_e: f64, seed: u64) -> Result<ProjectionImage> {
    if img.domain != ImageDomain::Intensity {
        return Err(Error::Drr(format!("noise needs an intensity image, got {:?}", img.domain)));
    }
    if !(photons_n0 > 0.0 && photons_n0.is_finite()) || !(sigma_e >= 0.0) {
        return Err(Error::Drr(format!("invalid noise parameters n0={photons_n0}, sigma_e={sigma_e}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let electronic = Normal::new(0.0, sigma_e).map_err(|e| Error::Drr(e.to_string()))?;
    let mut out = Vec::with_capacity(img.data.len());
    for &i in &img.data {
        let lambda = photons_n0 * i;
        let counts = if lambda > 0.0 {
            Poisson::new(lambda).map_err(|e| Error::Drr(e.to_string()))?.sample(&mut rng)
        } else {
            0.0
        };
        let v = counts / photons_n0 + electronic.sample(&mut rng);
        out.push(v.clamp(0.0, 1.0));
    }
    ProjectionImage::new(out, img.geometry.clone(), ImageDomain::Intensity)
}

/// Network input: `clamp(-ln(I) / reference, 0, 1)`.
pub fn log_normalize(img: &ProjectionImage, reference: f64) -> Result<ProjectionImage> {
    if img.domain != ImageDomain::Intensity {
        return Err(Error::Drr(format!("log normalisation needs an intensity image, got {:?}", img.domain)));
    }
    if !(reference > 0.0) {
        return Err(Error::Drr(format!("log reference must be positive, got {reference}")));
    }
    let data = img.data.iter().map(|&i| (-(i.max(1e-12)).ln() / reference).clamp(0.0, 1.0)).collect();
    ProjectionImage::new(data, img.geometry.clone(), ImageDomain::LogNormalized)
}

/// Noisy, log-normalised network input for one view.
pub fn simulate_view(scene: &PhantomScene, geom: &CameraGeometry, cfg: &DrrConfig, seed: u64) -> Result<ProjectionImage> {
    let clean = render_drr(scene, geom, cfg.step)?;
    let noisy = apply_noise(&clean, cfg.photons, cfg.sigma_e, seed)?;
    log_normalize(&noisy, cfg.log_reference)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{GeometryConfig, View};

    fn small_geom() -> CameraGeometry {
        let cfg = GeometryConfig { detector_px: 8, ..Default::default() };
        CameraGeometry::from_config(&cfg, View::Ap).unwrap()
    }

    #[test]
    fn vacuum_is_white() {
        let img = render_drr(&PhantomScene::empty(), &small_geom(), 0.01).unwrap();
        assert!(img.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn raw_domain_rejected_by_noise() {
        let l = line_integrals(&PhantomScene::empty(), &small_geom(), 0.01).unwrap();
        assert!(apply_noise(&l, 1e5, 0.0, 1).is_err());
    }

    #[test]
    fn rays_missing_volume_is_error() {
        let mut g = small_geom();
        g.principal_point = [1e6, 1e6];
        assert!(render_drr(&PhantomScene::empty(), &g, 0.01).is_err());
    }

    #[test]
    fn clip_box_chord() {
        let (t0, t1) = clip_to_cube(&Point3::new(0.0, -5.0, 0.0), &Vec3::new(0.0, 1.0, 0.0)).unwrap();
        assert!((t0 - 4.0).abs() < 1e-15 && (t1 - 6.0).abs() < 1e-15);
        assert!(clip_to_cube(&Point3::new(0.0, -5.0, 3.0), &Vec3::new(0.0, 1.0, 0.0)).is_none());
    }

    #[test]
    fn log_normalisation_range() {
        let g = small_geom();
        let img = ProjectionImage::new(vec![1.0; 64], g, ImageDomain::Intensity).unwrap();
        let n = log_normalize(&img, 0.5).unwrap();
        assert!(n.data.iter().all(|&v| v == 0.0));
    }
}
