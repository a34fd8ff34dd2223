use std::path::Path;

use biplanar_tensor::{init, load_checkpoint, ops, save_checkpoint, Tensor};
use serde::{Deserialize, Serialize};

use super::layers::{Dims, EncoderConfig, EncoderDecoder, Mlp, NamedParams};
use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::volume::Volume3D;

pub const TEACHER_FEATURES: usize = 64;
pub const TEACHER_MLP: [usize; 6] = [64, 128, 256, 128, 64, 5];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherConfig {
    pub ct_resolution: usize,
    pub encoder: EncoderConfig,
    /// Multiplier applied to attenuation values before the encoder.
    pub input_scale: f64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self { ct_resolution: 32, encoder: EncoderConfig { base_width: 8, levels: 3 }, input_scale: 2.0 }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.ct_resolution < 16 || self.ct_resolution % self.encoder.stride() != 0 {
            return Err(Error::Config(format!(
                "teacher CT resolution {} must be >= 16 and divisible by {}",
                self.ct_resolution,
                self.encoder.stride()
            )));
        }
        if !(self.input_scale > 0.0 && self.input_scale.is_finite()) {
            return Err(Error::Config(format!("teacher input_scale must be positive, got {}", self.input_scale)));
        }
        Ok(())
    }
}

/// CT-domain network: voxel-aligned features decoded into occupancy logits.
#[derive(Clone, Debug)]
pub struct TeacherNet {
    pub config: TeacherConfig,
    pub encoder: EncoderDecoder,
    pub decoder: Mlp,
}

/// Encoded CT: `[64, D, H, W]` features plus the grid placement.
#[derive(Clone, Debug)]
pub struct TeacherFeatures {
    pub features: Tensor,
    pub volume: Volume3D,
}

impl TeacherNet {
    pub fn new(config: TeacherConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = init::rng(seed);
        let encoder = EncoderDecoder::new(&mut rng, Dims::Three, 4, TEACHER_FEATURES, config.encoder)?;
        let decoder = Mlp::new(&mut rng, &TEACHER_MLP);
        Ok(Self { config, encoder, decoder })
    }

    pub fn params(&self) -> NamedParams {
        let mut p = self.encoder.params("encoder");
        p.extend(self.decoder.params("decoder"));
        p
    }

    pub fn encode(&self, ct: &Volume3D) -> Result<TeacherFeatures> {
        let r = self.config.ct_resolution;
        if ct.extents != [r; 3] {
            return Err(Error::Model(format!("teacher expects a {r}^3 CT, got {:?}", ct.extents)));
        }
        let n = r * r * r;
        let mut input = Vec::with_capacity(4 * n);
        input.extend(ct.data.iter().map(|v| v * self.config.input_scale));
        for axis in 0..3 {
            for k in 0..r {
                for j in 0..r {
                    for i in 0..r {
                        input.push(ct.voxel_center(k, j, i)[axis]);
                    }
                }
            }
        }
        let x = Tensor::new(input, &[1, 4, r, r, r])?;
        let f = self.encoder.forward(&x)?;
        let features = ops::reshape(&f, &[TEACHER_FEATURES, r, r, r])?;
        Ok(TeacherFeatures { features, volume: Volume3D { data: Vec::new(), ..ct.clone() } })
    }

    /// Voxel-aligned features `[N, 64]` at world points (trilinear, border clamped).
    pub fn point_features(&self, enc: &TeacherFeatures, points: &[Point3]) -> Result<Tensor> {
        let coords: Vec<[f64; 3]> = points.iter().map(|p| enc.volume.world_to_index(p)).collect();
        Ok(ops::gather3d(&enc.features, &coords)?)
    }

    /// Features `[N, 64]` and occupancy logits `[N, 5]`.
    pub fn query(&self, enc: &TeacherFeatures, points: &[Point3]) -> Result<(Tensor, Tensor)> {
        let f = self.point_features(enc, points)?;
        let logits = self.decoder.forward(&f)?;
        Ok((f, logits))
    }

    pub fn save(&self, base: &Path) -> Result<()> {
        Ok(save_checkpoint(base, &self.params(), serde_json::to_value(&self.config)?)?)
    }

    pub fn load(base: &Path) -> Result<Self> {
        let ck = load_checkpoint(base)?;
        let config: TeacherConfig = serde_json::from_value(ck.manifest.hyperparameters.clone())?;
        let net = Self::new(config, 0)?;
        ck.restore(&net.params())?;
        Ok(net)
    }
}
