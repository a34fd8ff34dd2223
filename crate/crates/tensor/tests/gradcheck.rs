//! Central finite-difference checks for every differentiable kernel, plus
//! naive-loop oracles for the convolution and sampling kernels.

use biplanar_tensor::{gradcheck, ops, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const REL_TOL: f64 = 1e-4;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn param(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::param(rand_vec(rng, shape.iter().product()), shape).unwrap()
}

#[test]
fn every_kernel_passes_gradcheck() {
    let suite = gradcheck::kernel_suite().unwrap();
    assert!(suite.len() >= 20);
    for k in &suite {
        assert!(k.max_rel_err <= REL_TOL, "{}: relative error {:e}", k.name, k.max_rel_err);
    }
}

#[test]
fn gradcheck_detects_a_wrong_gradient() {
    // the differences straddle the relu kink, so the numeric slope is about 0.5
    let x = Tensor::param(vec![1e-7, -1e-7], &[2]).unwrap();
    let err = gradcheck::max_relative_error(&[x], 1e-5, &|t| Ok(ops::relu(&t[0]))).unwrap();
    assert!(err > REL_TOL);
}

fn naive_conv2d(x: &[f64], xs: [usize; 4], w: &[f64], ws: [usize; 4], b: &[f64], stride: usize, pad: usize) -> Vec<f64> {
    let [n, c, h, wd] = xs;
    let [k, _, kh, kw] = ws;
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * k * oh * ow];
    for ni in 0..n {
        for ki in 0..k {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[ki];
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += w[((ki * c + ci) * kh + ky) * kw + kx]
                                        * x[((ni * c + ci) * h + iy as usize) * wd + ix as usize];
                                }
                            }
                        }
                    }
                    out[((ni * k + ki) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_nested_loop_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = rand_vec(&mut rng, 2 * 3 * 8 * 8);
    let w = rand_vec(&mut rng, 4 * 3 * 3 * 3);
    let b = rand_vec(&mut rng, 4);
    let out = ops::conv2d(
        &Tensor::new(x.clone(), &[2, 3, 8, 8]).unwrap(),
        &Tensor::new(w.clone(), &[4, 3, 3, 3]).unwrap(),
        Some(&Tensor::new(b.clone(), &[4]).unwrap()),
        2,
        1,
    )
    .unwrap();
    assert_eq!(out.shape(), &[2, 4, 4, 4]);
    let reference = naive_conv2d(&x, [2, 3, 8, 8], &w, [4, 3, 3, 3], &b, 2, 1);
    for (a, r) in out.data().iter().zip(&reference) {
        assert!((a - r).abs() <= 1e-12, "{a} vs {r}");
    }
}

#[test]
fn conv_is_linear_in_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = rand_vec(&mut rng, 2 * 4 * 4 * 4);
    let w = Tensor::new(rand_vec(&mut rng, 3 * 2 * 3 * 3 * 3), &[3, 2, 3, 3, 3]).unwrap();
    let a = 2.75;
    let base = ops::conv3d(&Tensor::new(x.clone(), &[1, 2, 4, 4, 4]).unwrap(), &w, None, 1, 1).unwrap();
    let scaled_in: Vec<f64> = x.iter().map(|v| a * v).collect();
    let scaled = ops::conv3d(&Tensor::new(scaled_in, &[1, 2, 4, 4, 4]).unwrap(), &w, None, 1, 1).unwrap();
    for (s, b) in scaled.data().iter().zip(base.data().iter()) {
        assert!((s - a * b).abs() <= 1e-10);
    }
}

#[test]
fn trilinear_matches_corner_expansion() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (c, d, h, w) = (3, 4, 5, 6);
    let grid = rand_vec(&mut rng, c * d * h * w);
    let coords: Vec<[f64; 3]> = (0..50)
        .map(|_| [rng.random_range(0.0..3.0), rng.random_range(0.0..4.0), rng.random_range(0.0..5.0)])
        .collect();
    let out = ops::gather3d(&Tensor::new(grid.clone(), &[c, d, h, w]).unwrap(), &coords).unwrap();
    for (p, [z, y, x]) in coords.iter().enumerate() {
        let (z0, y0, x0) = (z.floor(), y.floor(), x.floor());
        for ch in 0..c {
            let mut expect = 0.0;
            for dz in 0..2 {
                for dy in 0..2 {
                    for dx in 0..2 {
                        let wz = if dz == 0 { 1.0 - (z - z0) } else { z - z0 };
                        let wy = if dy == 0 { 1.0 - (y - y0) } else { y - y0 };
                        let wx = if dx == 0 { 1.0 - (x - x0) } else { x - x0 };
                        let idx = ((ch * d + z0 as usize + dz) * h + y0 as usize + dy) * w + x0 as usize + dx;
                        expect += wz * wy * wx * grid[idx];
                    }
                }
            }
            assert!((out.data()[p * c + ch] - expect).abs() <= 1e-12);
        }
    }
}

#[test]
fn identical_inputs_give_identical_buffers() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let x = param(&mut rng, &[1, 2, 8, 8]);
        let w = param(&mut rng, &[4, 2, 3, 3]);
        let y = ops::relu(&ops::conv2d(&x, &w, None, 1, 1).unwrap());
        let l = ops::mean(&ops::mul(&y, &y).unwrap());
        l.backward().unwrap();
        (y.to_vec(), w.grad().unwrap())
    };
    let (a, ga) = run();
    let (b, gb) = run();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(ga.iter().zip(&gb).all(|(x, y)| x.to_bits() == y.to_bits()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn softmax_ce_gradient_rows_sum_to_zero(logits in prop::collection::vec(-5.0f64..5.0, 15), labels in prop::collection::vec(0usize..5, 3)) {
        let x = Tensor::param(logits, &[3, 5]).unwrap();
        let mut y = vec![0.0; 15];
        for (r, &l) in labels.iter().enumerate() {
            y[r * 5 + l] = 1.0;
        }
        let loss = ops::softmax_cross_entropy(&x, &Tensor::new(y, &[3, 5]).unwrap()).unwrap();
        prop_assert!(loss.item() >= 0.0);
        loss.backward().unwrap();
        let g = x.grad().unwrap();
        for row in g.chunks(5) {
            prop_assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn linear_is_additive_in_input(a in prop::collection::vec(-2.0f64..2.0, 6), b in prop::collection::vec(-2.0f64..2.0, 6), w in prop::collection::vec(-1.0f64..1.0, 12)) {
        let w = Tensor::new(w, &[4, 3]).unwrap();
        let f = |v: Vec<f64>| ops::linear(&Tensor::new(v, &[2, 3]).unwrap(), &w, None).unwrap().to_vec();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let (fa, fb, fs) = (f(a), f(b), f(sum));
        for i in 0..fs.len() {
            prop_assert!((fs[i] - fa[i] - fb[i]).abs() < 1e-12);
        }
    }
}
