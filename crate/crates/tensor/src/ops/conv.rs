//! 2D/3D cross-correlation via chunked im2col + GEMM.
//!
//! Both ranks share one kernel over three spatial axes; 2D inputs run with a
//! unit depth axis. The column buffer is built for a bounded slice of output
//! sites at a time and rebuilt during backward instead of being stored.

use super::linear::{gemm, Transpose};
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

const COL_BUDGET: usize = 1 << 21;

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    n: usize,
    c: usize,
    inp: [usize; 3],
    k: usize,
    ker: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
    out: [usize; 3],
}

impl ConvGeom {
    fn in_sites(&self) -> usize {
        self.inp.iter().product()
    }
    fn out_sites(&self) -> usize {
        self.out.iter().product()
    }
    fn ckk(&self) -> usize {
        self.c * self.ker.iter().product::<usize>()
    }
    fn chunk(&self) -> usize {
        (COL_BUDGET / self.ckk()).clamp(1, self.out_sites())
    }

    /// Visits every (column row, output site in chunk, input offset) triple.
    fn for_each_tap(&self, s0: usize, len: usize, mut f: impl FnMut(usize, usize, Option<usize>)) {
        let [d, h, w] = self.inp;
        let [kd, kh, kw] = self.ker;
        let [_, oh, ow] = self.out;
        let start = [s0 / (oh * ow), (s0 / ow) % oh, s0 % ow];
        for c in 0..self.c {
            for kz in 0..kd {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let row = ((c * kd + kz) * kh + ky) * kw + kx;
                        let [mut oz, mut oy, mut ox] = start;
                        for l in 0..len {
                            let iz = (oz * self.stride[0] + kz) as isize - self.pad[0] as isize;
                            let iy = (oy * self.stride[1] + ky) as isize - self.pad[1] as isize;
                            let ix = (ox * self.stride[2] + kx) as isize - self.pad[2] as isize;
                            let inside = iz >= 0
                                && iy >= 0
                                && ix >= 0
                                && (iz as usize) < d
                                && (iy as usize) < h
                                && (ix as usize) < w;
                            let src = inside
                                .then(|| ((c * d + iz as usize) * h + iy as usize) * w + ix as usize);
                            f(row, l, src);
                            ox += 1;
                            if ox == ow {
                                ox = 0;
                                oy += 1;
                                if oy == oh {
                                    oy = 0;
                                    oz += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f64], s0: usize, len: usize, cols: &mut [f64]) {
        self.for_each_tap(s0, len, |row, l, src| {
            cols[row * len + l] = src.map_or(0.0, |i| x[i]);
        });
    }

    fn col2im(&self, cols: &[f64], s0: usize, len: usize, dx: &mut [f64]) {
        self.for_each_tap(s0, len, |row, l, src| {
            if let Some(i) = src {
                dx[i] += cols[row * len + l];
            }
        });
    }
}

fn conv_forward(g: &ConvGeom, x: &[f64], w: &[f64], b: Option<&[f64]>) -> Vec<f64> {
    let (s_in, s_out, ckk) = (g.in_sites(), g.out_sites(), g.ckk());
    let chunk = g.chunk();
    let mut out = vec![0.0; g.n * g.k * s_out];
    let mut cols = vec![0.0; ckk * chunk];
    for n in 0..g.n {
        let xn = &x[n * g.c * s_in..(n + 1) * g.c * s_in];
        let on = &mut out[n * g.k * s_out..(n + 1) * g.k * s_out];
        let mut s0 = 0;
        while s0 < s_out {
            let len = chunk.min(s_out - s0);
            g.im2col(xn, s0, len, &mut cols);
            gemm(Transpose::No, Transpose::No, g.k, ckk, len, 1.0, w, ckk, &cols, len, 0.0, &mut on[s0..], s_out);
            s0 += len;
        }
        if let Some(b) = b {
            for (k, plane) in on.chunks_mut(s_out).enumerate() {
                plane.iter_mut().for_each(|v| *v += b[k]);
            }
        }
    }
    out
}

fn conv_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    gout: &[f64],
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let (s_in, s_out, ckk) = (g.in_sites(), g.out_sites(), g.ckk());
    let chunk = g.chunk();
    let mut dx = need_dx.then(|| vec![0.0; g.n * g.c * s_in]);
    let mut dw = need_dw.then(|| vec![0.0; g.k * ckk]);
    let mut cols = vec![0.0; ckk * chunk];
    for n in 0..g.n {
        let xn = &x[n * g.c * s_in..(n + 1) * g.c * s_in];
        let gn = &gout[n * g.k * s_out..(n + 1) * g.k * s_out];
        let mut s0 = 0;
        while s0 < s_out {
            let len = chunk.min(s_out - s0);
            if let Some(dw) = dw.as_mut() {
                g.im2col(xn, s0, len, &mut cols);
                gemm(Transpose::No, Transpose::Yes, g.k, len, ckk, 1.0, &gn[s0..], s_out, &cols, len, 1.0, dw, ckk);
            }
            if let Some(dx) = dx.as_mut() {
                gemm(Transpose::Yes, Transpose::No, ckk, g.k, len, 1.0, w, ckk, &gn[s0..], s_out, 0.0, &mut cols, len);
                g.col2im(&cols, s0, len, &mut dx[n * g.c * s_in..(n + 1) * g.c * s_in]);
            }
            s0 += len;
        }
    }
    (dx, dw)
}

fn build(
    op: &'static str,
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    g: ConvGeom,
    out_shape: Vec<usize>,
) -> Result<Tensor> {
    if let Some(b) = b {
        if b.shape() != [g.k] {
            return Err(TensorError::shape(op, format!("bias {:?} != [{}]", b.shape(), g.k)));
        }
    }
    let out = {
        let bd = b.map(|b| b.data());
        conv_forward(&g, &x.data(), &w.data(), bd.as_deref().map(|v| v.as_slice()))
    };
    let mut parents = vec![x.clone(), w.clone()];
    if let Some(b) = b {
        parents.push(b.clone());
    }
    let (xc, wc, has_bias) = (x.clone(), w.clone(), b.is_some());
    Ok(Tensor::from_op(out, out_shape, parents, move |gout| {
        let (dx, dw) = conv_backward(&g, &xc.data(), &wc.data(), gout, xc.requires_grad(), wc.requires_grad());
        let mut grads = vec![dx, dw];
        if has_bias {
            let s_out = g.out_sites();
            let mut db = vec![0.0; g.k];
            for (i, plane) in gout.chunks(s_out).enumerate() {
                db[i % g.k] += plane.iter().sum::<f64>();
            }
            grads.push(Some(db));
        }
        grads
    }))
}

fn out_extent(op: &'static str, size: usize, ker: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(TensorError::shape(op, "stride must be >= 1"));
    }
    if ker == 0 || ker > size + 2 * pad {
        return Err(TensorError::shape(
            op,
            format!("kernel extent {ker} exceeds padded input extent {}", size + 2 * pad),
        ));
    }
    Ok((size + 2 * pad - ker) / stride + 1)
}

/// `x: [N, C, H, W]`, `w: [K, C, kh, kw]`, `b: [K]` -> `[N, K, H', W']`.
pub fn conv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Result<Tensor> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 4 || ws.len() != 4 {
        return Err(TensorError::shape(
            "conv2d",
            format!("expected input [N,C,H,W] and weight [K,C,kh,kw], got {xs:?} and {ws:?}"),
        ));
    }
    if xs[1] != ws[1] {
        return Err(TensorError::shape(
            "conv2d",
            format!("input has {} channels but weight expects {}", xs[1], ws[1]),
        ));
    }
    let oh = out_extent("conv2d", xs[2], ws[2], stride, pad)?;
    let ow = out_extent("conv2d", xs[3], ws[3], stride, pad)?;
    let g = ConvGeom {
        n: xs[0],
        c: xs[1],
        inp: [1, xs[2], xs[3]],
        k: ws[0],
        ker: [1, ws[2], ws[3]],
        stride: [1, stride, stride],
        pad: [0, pad, pad],
        out: [1, oh, ow],
    };
    build("conv2d", x, w, b, g, vec![xs[0], ws[0], oh, ow])
}

/// `x: [N, C, D, H, W]`, `w: [K, C, kd, kh, kw]`, `b: [K]` -> `[N, K, D', H', W']`.
pub fn conv3d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Result<Tensor> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 5 || ws.len() != 5 {
        return Err(TensorError::shape(
            "conv3d",
            format!("expected input [N,C,D,H,W] and weight [K,C,kd,kh,kw], got {xs:?} and {ws:?}"),
        ));
    }
    if xs[1] != ws[1] {
        return Err(TensorError::shape(
            "conv3d",
            format!("input has {} channels but weight expects {}", xs[1], ws[1]),
        ));
    }
    let mut out = [0; 3];
    for a in 0..3 {
        out[a] = out_extent("conv3d", xs[2 + a], ws[2 + a], stride, pad)?;
    }
    let g = ConvGeom {
        n: xs[0],
        c: xs[1],
        inp: [xs[2], xs[3], xs[4]],
        k: ws[0],
        ker: [ws[2], ws[3], ws[4]],
        stride: [stride; 3],
        pad: [pad; 3],
        out,
    };
    build("conv3d", x, w, b, g, vec![xs[0], ws[0], out[0], out[1], out[2]])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_kernel_scales_input() {
        let x = Tensor::new(vec![1.0; 9], &[1, 1, 3, 3]).unwrap();
        let w = Tensor::new(vec![2.0], &[1, 1, 1, 1]).unwrap();
        let b = Tensor::new(vec![0.0], &[1]).unwrap();
        let y = conv2d(&x, &w, Some(&b), 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert_eq!(y.to_vec(), vec![2.0; 9]);
    }

    #[test]
    fn full_window_sum() {
        let x = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2]).unwrap();
        let w = Tensor::new(vec![1.0; 4], &[1, 1, 2, 2]).unwrap();
        let b = Tensor::new(vec![0.0], &[1]).unwrap();
        let y = conv2d(&x, &w, Some(&b), 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.to_vec(), vec![10.0]);
    }

    #[test]
    fn dimension_errors() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        assert!(conv2d(&x, &Tensor::zeros(&[1, 3, 3, 3]), None, 1, 1).is_err());
        assert!(conv2d(&x, &Tensor::zeros(&[1, 2, 7, 7]), None, 1, 1).is_err());
        assert!(conv2d(&x, &Tensor::zeros(&[1, 2, 3, 3]), None, 0, 1).is_err());
        assert!(conv3d(&x, &Tensor::zeros(&[1, 2, 3, 3]), None, 1, 1).is_err());
    }

    #[test]
    fn chunking_matches_single_pass() {
        // Large enough that the column buffer is split across several chunks.
        let g = ConvGeom {
            n: 1,
            c: 40,
            inp: [1, 80, 80],
            k: 3,
            ker: [1, 3, 3],
            stride: [1, 1, 1],
            pad: [0, 1, 1],
            out: [1, 80, 80],
        };
        assert!(g.chunk() < g.out_sites());
        let x: Vec<f64> = (0..g.c * g.in_sites()).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        let w: Vec<f64> = (0..g.k * g.ckk()).map(|i| ((i * 31) % 17) as f64 / 8.0 - 1.0).collect();
        let fast = conv_forward(&g, &x, &w, None);
        let mut slow = vec![0.0; g.k * g.out_sites()];
        for k in 0..g.k {
            for y in 0..80usize {
                for xx in 0..80usize {
                    let mut acc = 0.0;
                    for c in 0..g.c {
                        for ky in 0..3usize {
                            for kx in 0..3usize {
                                let (iy, ix) = (y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                                if (0..80).contains(&iy) && (0..80).contains(&ix) {
                                    acc += w[((k * g.c + c) * 3 + ky) * 3 + kx]
                                        * x[(c * 80 + iy as usize) * 80 + ix as usize];
                                }
                            }
                        }
                    }
                    slow[(k * 80 + y) * 80 + xx] = acc;
                }
            }
        }
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
