use std::path::Path;

use biplanar_tensor::{init, load_checkpoint, ops, save_checkpoint, Tensor};
use serde::{Deserialize, Serialize};

use super::layers::{Dims, EncoderConfig, EncoderDecoder, NamedParams};
use crate::drr::ProjectionImage;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegNetConfig {
    pub encoder: EncoderConfig,
}

impl Default for SegNetConfig {
    fn default() -> Self {
        Self { encoder: EncoderConfig { base_width: 8, levels: 3 } }
    }
}

/// 2D U-Net producing background/bone logits per pixel.
#[derive(Clone, Debug)]
pub struct SegNet {
    pub config: SegNetConfig,
    pub net: EncoderDecoder,
}

impl SegNet {
    pub fn new(config: SegNetConfig, seed: u64) -> Result<Self> {
        let mut rng = init::rng(seed);
        let net = EncoderDecoder::new(&mut rng, Dims::Two, 1, 2, config.encoder)?;
        Ok(Self { config, net })
    }

    pub fn params(&self) -> NamedParams {
        self.net.params("unet")
    }

    /// Logits `[sum(H * W), 2]` for a batch of equally sized images, row-major per image.
    pub fn logits(&self, images: &[&ProjectionImage]) -> Result<Tensor> {
        let first = images.first().ok_or_else(|| Error::Model("segmentation batch is empty".into()))?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::with_capacity(images.len() * h * w);
        for img in images {
            if (img.height, img.width) != (h, w) {
                return Err(Error::Model(format!(
                    "segmentation batch mixes {}x{} and {}x{} images",
                    w, h, img.width, img.height
                )));
            }
            data.extend_from_slice(&img.data);
        }
        let x = Tensor::new(data, &[images.len(), 1, h, w])?;
        Ok(ops::channels_last(&self.net.forward(&x)?)?)
    }

    /// Per-pixel bone probability in `[0, 1]`.
    pub fn probabilities(&self, img: &ProjectionImage) -> Result<Vec<f64>> {
        let p = ops::softmax(&self.logits(&[img])?)?;
        let data = p.data();
        Ok(data.chunks(2).map(|r| r[1]).collect())
    }

    /// Binary mask `probability > threshold`.
    pub fn predict_mask(&self, img: &ProjectionImage, threshold: f64) -> Result<Vec<bool>> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::Model(format!("mask threshold must lie in (0, 1), got {threshold}")));
        }
        Ok(self.probabilities(img)?.into_iter().map(|p| p > threshold).collect())
    }

    pub fn save(&self, base: &Path) -> Result<()> {
        Ok(save_checkpoint(base, &self.params(), serde_json::to_value(&self.config)?)?)
    }

    pub fn load(base: &Path) -> Result<Self> {
        let ck = load_checkpoint(base)?;
        let config: SegNetConfig = serde_json::from_value(ck.manifest.hyperparameters.clone())?;
        let net = Self::new(config, 0)?;
        ck.restore(&net.params())?;
        Ok(net)
    }
}
