//! Parameterised building blocks shared by the three networks.

use biplanar_tensor::{init, ops, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NamedParams = Vec<(String, Tensor)>;

/// `y = x wᵀ + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Self {
        Self { weight: init::kaiming_uniform(rng, &[fan_out, fan_in], fan_in), bias: init::zeros_param(&[fan_out]) }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(ops::linear(x, &self.weight, Some(&self.bias))?)
    }

    pub fn params(&self, prefix: &str) -> NamedParams {
        vec![(format!("{prefix}.weight"), self.weight.clone()), (format!("{prefix}.bias"), self.bias.clone())]
    }
}

/// Fully connected stack with ReLU between layers and raw logits out.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(rng: &mut impl Rng, widths: &[usize]) -> Self {
        Self { layers: widths.windows(2).map(|w| Linear::new(rng, w[0], w[1])).collect() }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].fan_in()];
        w.extend(self.layers.iter().map(Linear::fan_out));
        w
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_from(0, x)
    }

    /// Runs layers `start..` on `x`, where `x` is the pre-activation output of
    /// layer `start - 1` when `start > 0`.
    pub fn forward_from(&self, start: usize, x: &Tensor) -> Result<Tensor> {
        let mut h = if start > 0 { ops::relu(x) } else { x.clone() };
        for (i, layer) in self.layers.iter().enumerate().skip(start) {
            h = layer.forward(&h)?;
            if i + 1 < self.layers.len() {
                h = ops::relu(&h);
            }
        }
        Ok(h)
    }

    pub fn params(&self, prefix: &str) -> NamedParams {
        self.layers.iter().enumerate().flat_map(|(i, l)| l.params(&format!("{prefix}.{i}"))).collect()
    }
}

/// Spatial dimensionality of a convolutional module.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dims {
    Two,
    Three,
}

impl Dims {
    fn rank(self) -> usize {
        match self {
            Dims::Two => 2,
            Dims::Three => 3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: Tensor,
    pub bias: Tensor,
    dims: Dims,
    pad: usize,
}

impl Conv {
    pub fn new(rng: &mut impl Rng, dims: Dims, cin: usize, cout: usize, kernel: usize) -> Self {
        let mut shape = vec![cout, cin];
        shape.extend(std::iter::repeat_n(kernel, dims.rank()));
        let fan_in = cin * kernel.pow(dims.rank() as u32);
        Self { weight: init::kaiming_uniform(rng, &shape, fan_in), bias: init::zeros_param(&[cout]), dims, pad: kernel / 2 }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(match self.dims {
            Dims::Two => ops::conv2d(x, &self.weight, Some(&self.bias), 1, self.pad)?,
            Dims::Three => ops::conv3d(x, &self.weight, Some(&self.bias), 1, self.pad)?,
        })
    }

    pub fn params(&self, prefix: &str) -> NamedParams {
        vec![(format!("{prefix}.weight"), self.weight.clone()), (format!("{prefix}.bias"), self.bias.clone())]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    /// Channels at full resolution; doubled at each coarser level.
    pub base_width: usize,
    /// Number of resolution levels (pooling steps + 1).
    pub levels: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 || !(1..=6).contains(&self.levels) {
            return Err(Error::Config(format!(
                "encoder needs base_width >= 1 and 1..=6 levels, got {} and {}",
                self.base_width, self.levels
            )));
        }
        Ok(())
    }

    /// Spatial extents must be divisible by this.
    pub fn stride(&self) -> usize {
        1 << (self.levels - 1)
    }
}

/// U-Net style encoder-decoder returning a feature map at input resolution.
#[derive(Clone, Debug)]
pub struct EncoderDecoder {
    dims: Dims,
    config: EncoderConfig,
    down: Vec<[Conv; 2]>,
    up: Vec<Conv>,
    head: Conv,
    out_channels: usize,
}

impl EncoderDecoder {
    pub fn new(rng: &mut impl Rng, dims: Dims, in_channels: usize, out_channels: usize, config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let width = |l: usize| config.base_width << l;
        let mut down = Vec::with_capacity(config.levels);
        let mut cin = in_channels;
        for l in 0..config.levels {
            down.push([Conv::new(rng, dims, cin, width(l), 3), Conv::new(rng, dims, width(l), width(l), 3)]);
            cin = width(l);
        }
        // Decoder level l sees the upsampled level l + 1 output and the level l skip.
        let mut up = Vec::with_capacity(config.levels.saturating_sub(1));
        let mut below = width(config.levels - 1);
        for l in (0..config.levels - 1).rev() {
            let cout = if l == 0 { 2 * config.base_width } else { width(l) };
            up.push(Conv::new(rng, dims, below + width(l), cout, 3));
            below = cout;
        }
        let head = Conv::new(rng, dims, below, out_channels, 1);
        Ok(Self { dims, config, down, up, head, out_channels })
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn config(&self) -> EncoderConfig {
        self.config
    }

    /// `x: [N, C, spatial...]` -> `[N, out_channels, spatial...]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let rank = self.dims.rank();
        let spatial = &x.shape()[2..];
        if spatial.len() != rank || spatial.iter().any(|&s| s == 0 || s % self.config.stride() != 0) {
            return Err(Error::Model(format!(
                "input {:?} must have {rank} spatial extents divisible by {}",
                x.shape(),
                self.config.stride()
            )));
        }
        let pool = |t: &Tensor| -> Result<Tensor> {
            Ok(match self.dims {
                Dims::Two => ops::max_pool2d(t)?,
                Dims::Three => ops::max_pool3d(t)?,
            })
        };
        let upsample = |t: &Tensor| -> Result<Tensor> {
            Ok(match self.dims {
                Dims::Two => ops::upsample2d(t, 2)?,
                Dims::Three => ops::upsample3d(t, 2)?,
            })
        };
        let mut skips = Vec::with_capacity(self.down.len());
        let mut h = x.clone();
        for (l, [a, b]) in self.down.iter().enumerate() {
            if l > 0 {
                h = pool(&h)?;
            }
            h = ops::relu(&a.forward(&h)?);
            h = ops::relu(&b.forward(&h)?);
            skips.push(h.clone());
        }
        for (conv, skip) in self.up.iter().zip(skips.iter().rev().skip(1)) {
            let u = upsample(&h)?;
            h = ops::relu(&conv.forward(&ops::concat(&[&u, skip], 1)?)?);
        }
        self.head.forward(&h)
    }

    pub fn params(&self, prefix: &str) -> NamedParams {
        let mut p = Vec::new();
        for (l, [a, b]) in self.down.iter().enumerate() {
            p.extend(a.params(&format!("{prefix}.down{l}.0")));
            p.extend(b.params(&format!("{prefix}.down{l}.1")));
        }
        for (i, c) in self.up.iter().enumerate() {
            p.extend(c.params(&format!("{prefix}.up{i}")));
        }
        p.extend(self.head.params(&format!("{prefix}.head")));
        p
    }
}

/// Normalised pixel coordinates as two `[H, W]` planes: column then row, in `[-1, 1]`.
pub fn coordinate_planes(height: usize, width: usize) -> Vec<f64> {
    let norm = |i: usize, n: usize| if n > 1 { -1.0 + 2.0 * i as f64 / (n - 1) as f64 } else { 0.0 };
    let mut out = Vec::with_capacity(2 * height * width);
    for _ in 0..height {
        out.extend((0..width).map(|c| norm(c, width)));
    }
    for r in 0..height {
        out.extend(std::iter::repeat_n(norm(r, height), width));
    }
    out
}
