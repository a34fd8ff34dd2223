use std::path::Path;

use biplanar_tensor::{init, ops, save_checkpoint, load_checkpoint, Tensor};
use serde::{Deserialize, Serialize};

use super::layers::{coordinate_planes, Dims, EncoderConfig, EncoderDecoder, Linear, Mlp, NamedParams};
use super::teacher::TEACHER_FEATURES;
use crate::drr::{ImageDomain, ProjectionImage};
use crate::error::{Error, Result};
use crate::geometry::{project_point, view_depth, CameraGeometry, Point3};
use crate::occupancy::{OccupancyVector, NUM_CLASSES};

pub const VIEW_FEATURES: usize = 256;
pub const QUERY_FEATURES: usize = 2 * (VIEW_FEATURES + 1);
pub const STUDENT_MLP: [usize; 6] = [514, 1024, 512, 256, 128, 5];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudentConfig {
    pub image_px: usize,
    pub encoder: EncoderConfig,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self { image_px: 64, encoder: EncoderConfig { base_width: 16, levels: 3 } }
    }
}

impl StudentConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.image_px == 0 || self.image_px % self.encoder.stride() != 0 {
            return Err(Error::Config(format!(
                "student image size {} must be a positive multiple of {}",
                self.image_px,
                self.encoder.stride()
            )));
        }
        Ok(())
    }
}

/// One radiograph and its enhanced copy, both in the log-normalised domain.
#[derive(Clone, Debug)]
pub struct ViewInput {
    pub image: ProjectionImage,
    pub enhanced: ProjectionImage,
}

impl ViewInput {
    pub fn geometry(&self) -> &CameraGeometry {
        &self.image.geometry
    }
}

/// Per-view `[256, H, W]` feature maps with the geometry that produced them.
#[derive(Clone, Debug)]
pub struct StudentFeatures {
    pub maps: Vec<Tensor>,
    pub geometries: Vec<CameraGeometry>,
}

/// Biplanar network: two unshared encoders, pixel-aligned query features,
/// an occupancy decoder and the distillation projection.
#[derive(Clone, Debug)]
pub struct StudentNet {
    pub config: StudentConfig,
    pub encoders: [EncoderDecoder; 2],
    pub decoder: Mlp,
    pub gamma: Linear,
}

impl StudentNet {
    pub fn new(config: StudentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = init::rng(seed);
        let encoders = [
            EncoderDecoder::new(&mut rng, Dims::Two, 4, VIEW_FEATURES, config.encoder)?,
            EncoderDecoder::new(&mut rng, Dims::Two, 4, VIEW_FEATURES, config.encoder)?,
        ];
        let decoder = Mlp::new(&mut rng, &STUDENT_MLP);
        let gamma = Linear::new(&mut rng, QUERY_FEATURES, TEACHER_FEATURES);
        Ok(Self { config, encoders, decoder, gamma })
    }

    pub fn params(&self) -> NamedParams {
        let mut p = self.encoders[0].params("encoder_ap");
        p.extend(self.encoders[1].params("encoder_rl"));
        p.extend(self.decoder.params("decoder"));
        p.extend(self.gamma.params("gamma"));
        p
    }

    fn check_image(&self, img: &ProjectionImage) -> Result<()> {
        let n = self.config.image_px;
        if img.width != n || img.height != n {
            return Err(Error::Model(format!("student expects {n}x{n} images, got {}x{}", img.width, img.height)));
        }
        if img.domain != ImageDomain::LogNormalized {
            return Err(Error::Model(format!("student expects log-normalised images, got {:?}", img.domain)));
        }
        Ok(())
    }

    /// Encodes both views; the first slot is AP-like, the second RL-like.
    pub fn encode(&self, views: &[ViewInput]) -> Result<StudentFeatures> {
        if views.len() != 2 {
            return Err(Error::Model(format!("student needs exactly two views, got {}", views.len())));
        }
        let mut maps = Vec::with_capacity(2);
        for (v, enc) in views.iter().zip(&self.encoders) {
            self.check_image(&v.image)?;
            self.check_image(&v.enhanced)?;
            if v.image.geometry != v.enhanced.geometry {
                return Err(Error::Model("image and enhanced image disagree on geometry".into()));
            }
            v.geometry().validate()?;
            let (h, w) = (v.image.height, v.image.width);
            let mut input = Vec::with_capacity(4 * h * w);
            input.extend_from_slice(&v.image.data);
            input.extend_from_slice(&v.enhanced.data);
            input.extend(coordinate_planes(h, w));
            let x = Tensor::new(input, &[1, 4, h, w])?;
            maps.push(ops::reshape(&enc.forward(&x)?, &[VIEW_FEATURES, h, w])?);
        }
        Ok(StudentFeatures { maps, geometries: views.iter().map(|v| v.geometry().clone()).collect() })
    }

    /// Pixel coordinates `[row, col]` and depths of `points` in each view.
    fn projections(enc: &StudentFeatures, points: &[Point3]) -> Result<Vec<(Vec<[f64; 2]>, Vec<f64>)>> {
        enc.geometries
            .iter()
            .map(|g| {
                let mut coords = Vec::with_capacity(points.len());
                let mut depths = Vec::with_capacity(points.len());
                for p in points {
                    let px = project_point(g, p)?;
                    coords.push([px.v, px.u]);
                    depths.push(view_depth(g, p));
                }
                Ok((coords, depths))
            })
            .collect()
    }

    /// Query features `[N, 514]` ordered `[F_ap, z_ap, F_rl, z_rl]`.
    pub fn point_features(&self, enc: &StudentFeatures, points: &[Point3]) -> Result<Tensor> {
        let n = points.len();
        let mut parts = Vec::with_capacity(4);
        for ((coords, depths), map) in Self::projections(enc, points)?.into_iter().zip(&enc.maps) {
            parts.push(ops::gather2d(map, &coords)?);
            parts.push(Tensor::new(depths, &[n, 1])?);
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        Ok(ops::concat(&refs, 1)?)
    }

    /// Query features `[N, 514]` and occupancy logits `[N, 5]`.
    pub fn query(&self, enc: &StudentFeatures, points: &[Point3]) -> Result<(Tensor, Tensor)> {
        let f = self.point_features(enc, points)?;
        let logits = self.decoder.forward(&f)?;
        Ok((f, logits))
    }

    /// Distillation projection `[N, 514] -> [N, 64]`.
    pub fn project_features(&self, f: &Tensor) -> Result<Tensor> {
        if f.shape().len() != 2 || f.shape()[1] != QUERY_FEATURES {
            return Err(Error::Model(format!("projection expects [N, {QUERY_FEATURES}], got {:?}", f.shape())));
        }
        self.gamma.forward(f)
    }

    /// Inference cache with the first decoder layer folded into the feature maps.
    ///
    /// The first layer is affine in the query features and the features are
    /// bilinear in the maps, so applying the layer's per-view weight blocks to
    /// the maps first and interpolating afterwards gives the same
    /// pre-activation at a fraction of the per-point cost.
    pub fn prepare_inference(&self, enc: &StudentFeatures) -> Result<InferenceCache> {
        let first = &self.decoder.layers[0];
        let hidden = first.fan_out();
        let w = first.weight.to_vec();
        let mut maps = Vec::with_capacity(2);
        let mut depth_weights = Vec::with_capacity(2);
        for (view, map) in enc.maps.iter().enumerate() {
            let &[c, h, wd] = map.shape() else { unreachable!("feature maps are [C, H, W]") };
            let offset = view * (VIEW_FEATURES + 1);
            let block: Vec<f64> = (0..hidden).flat_map(|o| w[o * QUERY_FEATURES + offset..][..c].to_vec()).collect();
            let mut out = vec![0.0; hidden * h * wd];
            ops::gemm(
                ops::Transpose::No,
                ops::Transpose::No,
                hidden,
                c,
                h * wd,
                1.0,
                &block,
                c,
                &map.data(),
                h * wd,
                0.0,
                &mut out,
                h * wd,
            );
            maps.push(Tensor::new(out, &[hidden, h, wd])?);
            depth_weights.push((0..hidden).map(|o| w[o * QUERY_FEATURES + offset + c]).collect::<Vec<f64>>());
        }
        Ok(InferenceCache {
            maps,
            depth_weights,
            bias: first.bias.to_vec(),
            geometries: enc.geometries.clone(),
            decoder: self.decoder.clone(),
        })
    }

    pub fn save(&self, base: &Path) -> Result<()> {
        Ok(save_checkpoint(base, &self.params(), serde_json::to_value(&self.config)?)?)
    }

    pub fn load(base: &Path) -> Result<Self> {
        let ck = load_checkpoint(base)?;
        let config: StudentConfig = serde_json::from_value(ck.manifest.hyperparameters.clone())?;
        let net = Self::new(config, 0)?;
        ck.restore(&net.params())?;
        Ok(net)
    }
}

/// See [`StudentNet::prepare_inference`].
pub struct InferenceCache {
    maps: Vec<Tensor>,
    depth_weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    geometries: Vec<CameraGeometry>,
    decoder: Mlp,
}

impl InferenceCache {
    pub fn logits(&self, points: &[Point3]) -> Result<Tensor> {
        let enc = StudentFeatures { maps: Vec::new(), geometries: self.geometries.clone() };
        let hidden = self.bias.len();
        let mut pre = vec![0.0; points.len() * hidden];
        for row in pre.chunks_mut(hidden) {
            row.copy_from_slice(&self.bias);
        }
        for (((coords, depths), map), dw) in
            StudentNet::projections(&enc, points)?.into_iter().zip(&self.maps).zip(&self.depth_weights)
        {
            let g = ops::gather2d(map, &coords)?;
            let gd = g.data();
            for ((row, src), z) in pre.chunks_mut(hidden).zip(gd.chunks(hidden)).zip(&depths) {
                for ((o, s), w) in row.iter_mut().zip(src).zip(dw) {
                    *o += s + w * z;
                }
            }
        }
        let h = Tensor::new(pre, &[points.len(), hidden])?;
        self.decoder.forward_from(1, &h)
    }

    pub fn probabilities(&self, points: &[Point3]) -> Result<Vec<OccupancyVector>> {
        let logits = self.logits(points)?;
        let data = logits.data();
        Ok(data.chunks(NUM_CLASSES).map(OccupancyVector::from_logits).collect())
    }
}
