//! Multilinear sampling of channel grids at continuous index coordinates.
//!
//! Coordinates are clamped to the grid (border replication). The result is
//! differentiable with respect to the grid values only.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Lower node, upper node and fractional weight along one axis.
fn axis(coord: f64, extent: usize) -> (usize, usize, f64) {
    if extent == 1 {
        return (0, 0, 0.0);
    }
    let c = coord.clamp(0.0, (extent - 1) as f64);
    let i0 = (c.floor() as usize).min(extent - 2);
    (i0, i0 + 1, c - i0 as f64)
}

fn gather_impl(grid: &Tensor, extents: &[usize], taps: Vec<Vec<(usize, f64)>>) -> Tensor {
    let c = grid.shape()[0];
    let s: usize = extents.iter().product();
    let n = taps.len();
    // Site-major copy so each tap reads one contiguous channel vector.
    let mut sites = vec![0.0; s * c];
    {
        let src = grid.data();
        for ch in 0..c {
            for (i, &v) in src[ch * s..(ch + 1) * s].iter().enumerate() {
                sites[i * c + ch] = v;
            }
        }
    }
    let mut out = vec![0.0; n * c];
    for (row, tap) in out.chunks_mut(c).zip(&taps) {
        for &(idx, w) in tap {
            let site = &sites[idx * c..(idx + 1) * c];
            row.iter_mut().zip(site).for_each(|(o, v)| *o += w * v);
        }
    }
    drop(sites);
    Tensor::from_op(out, vec![n, c], vec![grid.clone()], move |g| {
        let mut acc = vec![0.0; s * c];
        for (row, tap) in g.chunks(c).zip(&taps) {
            for &(idx, w) in tap {
                let site = &mut acc[idx * c..(idx + 1) * c];
                site.iter_mut().zip(row).for_each(|(a, gv)| *a += w * gv);
            }
        }
        let mut dg = vec![0.0; s * c];
        for i in 0..s {
            for ch in 0..c {
                dg[ch * s + i] = acc[i * c + ch];
            }
        }
        vec![Some(dg)]
    })
}

/// Bilinear sampling of `grid: [C, H, W]` at `(row, col)` index coordinates -> `[N, C]`.
pub fn gather2d(grid: &Tensor, coords: &[[f64; 2]]) -> Result<Tensor> {
    let &[_, h, w] = grid.shape() else {
        return Err(TensorError::shape("gather2d", format!("expected grid [C, H, W], got {:?}", grid.shape())));
    };
    if h == 0 || w == 0 {
        return Err(TensorError::shape("gather2d", "empty grid"));
    }
    let taps = coords
        .iter()
        .map(|&[r, col]| {
            let (y0, y1, ty) = axis(r, h);
            let (x0, x1, tx) = axis(col, w);
            vec![
                (y0 * w + x0, (1.0 - ty) * (1.0 - tx)),
                (y0 * w + x1, (1.0 - ty) * tx),
                (y1 * w + x0, ty * (1.0 - tx)),
                (y1 * w + x1, ty * tx),
            ]
        })
        .collect();
    Ok(gather_impl(grid, &[h, w], taps))
}

/// Trilinear sampling of `grid: [C, D, H, W]` at `(z, y, x)` index coordinates -> `[N, C]`.
pub fn gather3d(grid: &Tensor, coords: &[[f64; 3]]) -> Result<Tensor> {
    let &[_, d, h, w] = grid.shape() else {
        return Err(TensorError::shape("gather3d", format!("expected grid [C, D, H, W], got {:?}", grid.shape())));
    };
    if d == 0 || h == 0 || w == 0 {
        return Err(TensorError::shape("gather3d", "empty grid"));
    }
    let taps = coords
        .iter()
        .map(|&[zc, yc, xc]| {
            let (z0, z1, tz) = axis(zc, d);
            let (y0, y1, ty) = axis(yc, h);
            let (x0, x1, tx) = axis(xc, w);
            let mut tap = Vec::with_capacity(8);
            for (z, wz) in [(z0, 1.0 - tz), (z1, tz)] {
                for (y, wy) in [(y0, 1.0 - ty), (y1, ty)] {
                    for (x, wx) in [(x0, 1.0 - tx), (x1, tx)] {
                        tap.push(((z * h + y) * w + x, wz * wy * wx));
                    }
                }
            }
            tap
        })
        .collect();
    Ok(gather_impl(grid, &[d, h, w], taps))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_midpoint() {
        let g = Tensor::new(vec![0.0, 10.0], &[1, 1, 2]).unwrap();
        let v = gather2d(&g, &[[0.0, 0.5]]).unwrap();
        assert!((v.item() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn nodes_are_exact() {
        let vals: Vec<f64> = (0..2 * 3 * 4).map(|i| i as f64 * 1.5).collect();
        let g = Tensor::new(vals.clone(), &[2, 3, 4]).unwrap();
        let v = gather2d(&g, &[[2.0, 3.0], [0.0, 0.0]]).unwrap().to_vec();
        assert_eq!(v, vec![vals[11], vals[12 + 11], vals[0], vals[12]]);
    }

    #[test]
    fn out_of_range_clamps() {
        let g = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[1, 2, 2]).unwrap();
        let a = gather2d(&g, &[[-3.0, 7.5]]).unwrap().item();
        let b = gather2d(&g, &[[0.0, 1.0]]).unwrap().item();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_rank_rejected() {
        assert!(gather2d(&Tensor::zeros(&[4, 4]), &[[0.0, 0.0]]).is_err());
        assert!(gather3d(&Tensor::zeros(&[1, 4, 4]), &[[0.0, 0.0, 0.0]]).is_err());
    }
}
