//! 2x max pooling and nearest-neighbour 2x upsampling over 2 or 3 spatial axes.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Splits `[N, C, spatial...]` into `(N*C, [d, h, w])` with unit depth for 2D.
fn planes(op: &'static str, shape: &[usize], rank: usize) -> Result<(usize, [usize; 3])> {
    if shape.len() != rank + 2 {
        return Err(TensorError::shape(op, format!("expected rank {}, got shape {shape:?}", rank + 2)));
    }
    let nc = shape[0] * shape[1];
    Ok(match rank {
        2 => (nc, [1, shape[2], shape[3]]),
        _ => (nc, [shape[2], shape[3], shape[4]]),
    })
}

fn max_pool(op: &'static str, x: &Tensor, rank: usize) -> Result<Tensor> {
    let (nc, [d, h, w]) = planes(op, x.shape(), rank)?;
    let f = if rank == 2 { [1, 2, 2] } else { [2, 2, 2] };
    let (od, oh, ow) = (d / f[0], h / f[1], w / f[2]);
    if od == 0 || oh == 0 || ow == 0 {
        return Err(TensorError::shape(op, format!("input {:?} too small to pool", x.shape())));
    }
    let src = x.data();
    let (s_in, s_out) = (d * h * w, od * oh * ow);
    let mut out = vec![0.0; nc * s_out];
    let mut arg = vec![0usize; nc * s_out];
    for p in 0..nc {
        let plane = &src[p * s_in..(p + 1) * s_in];
        for z in 0..od {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for dz in 0..f[0] {
                        for dy in 0..f[1] {
                            for dx in 0..f[2] {
                                let i = ((z * f[0] + dz) * h + y * f[1] + dy) * w + xx * f[2] + dx;
                                if plane[i] > best {
                                    best = plane[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    let o = p * s_out + (z * oh + y) * ow + xx;
                    out[o] = best;
                    arg[o] = p * s_in + best_i;
                }
            }
        }
    }
    drop(src);
    let mut shape = x.shape().to_vec();
    let r = shape.len();
    if rank == 3 {
        shape[r - 3] = od;
    }
    shape[r - 2] = oh;
    shape[r - 1] = ow;
    let n_in = x.numel();
    Ok(Tensor::from_op(out, shape, vec![x.clone()], move |g| {
        let mut dx = vec![0.0; n_in];
        for (o, &i) in arg.iter().enumerate() {
            dx[i] += g[o];
        }
        vec![Some(dx)]
    }))
}

fn upsample(op: &'static str, x: &Tensor, rank: usize, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(TensorError::shape(op, "factor must be >= 1"));
    }
    let (nc, [d, h, w]) = planes(op, x.shape(), rank)?;
    let fd = if rank == 3 { factor } else { 1 };
    let (od, oh, ow) = (d * fd, h * factor, w * factor);
    let src = x.data();
    let (s_in, s_out) = (d * h * w, od * oh * ow);
    let mut out = vec![0.0; nc * s_out];
    for p in 0..nc {
        for z in 0..od {
            for y in 0..oh {
                let dst = p * s_out + (z * oh + y) * ow;
                let row = p * s_in + ((z / fd) * h + y / factor) * w;
                for xx in 0..ow {
                    out[dst + xx] = src[row + xx / factor];
                }
            }
        }
    }
    drop(src);
    let mut shape = x.shape().to_vec();
    let r = shape.len();
    if rank == 3 {
        shape[r - 3] = od;
    }
    shape[r - 2] = oh;
    shape[r - 1] = ow;
    let n_in = x.numel();
    Ok(Tensor::from_op(out, shape, vec![x.clone()], move |g| {
        let mut dx = vec![0.0; n_in];
        for p in 0..nc {
            for z in 0..od {
                for y in 0..oh {
                    let src_row = p * s_out + (z * oh + y) * ow;
                    let dst_row = p * s_in + ((z / fd) * h + y / factor) * w;
                    for xx in 0..ow {
                        dx[dst_row + xx / factor] += g[src_row + xx];
                    }
                }
            }
        }
        vec![Some(dx)]
    }))
}

/// 2x2 max pooling with stride 2 on `[N, C, H, W]` (odd trailing rows dropped).
pub fn max_pool2d(x: &Tensor) -> Result<Tensor> {
    max_pool("max_pool2d", x, 2)
}

/// 2x2x2 max pooling with stride 2 on `[N, C, D, H, W]`.
pub fn max_pool3d(x: &Tensor) -> Result<Tensor> {
    max_pool("max_pool3d", x, 3)
}

pub fn upsample2d(x: &Tensor, factor: usize) -> Result<Tensor> {
    upsample("upsample2d", x, 2, factor)
}

pub fn upsample3d(x: &Tensor, factor: usize) -> Result<Tensor> {
    upsample("upsample3d", x, 3, factor)
}
