//! Central finite-difference gradient checks and the per-kernel suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::ops;
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Largest relative error `|a - n| / max(|a|, |n|, 1)` between analytic and
/// numeric gradients of `sum(f(inputs) * r)` for a fixed random projection `r`.
pub fn max_relative_error(inputs: &[Tensor], eps: f64, f: &dyn Fn(&[Tensor]) -> Result<Tensor>) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    let probe = f(inputs)?;
    let r = Tensor::new((0..probe.numel()).map(|_| rng.random_range(-1.0..1.0)).collect(), probe.shape())?;
    let objective = |xs: &[Tensor]| -> Result<Tensor> { Ok(ops::sum(&ops::mul(&f(xs)?, &r)?)) };

    for x in inputs {
        x.zero_grad();
    }
    objective(inputs)?.backward()?;

    let mut worst: f64 = 0.0;
    for x in inputs {
        let analytic = x.grad().unwrap_or_else(|| vec![0.0; x.numel()]);
        for (i, &a) in analytic.iter().enumerate() {
            let orig = x.data()[i];
            x.data_mut()[i] = orig + eps;
            let up = objective(inputs)?.item();
            x.data_mut()[i] = orig - eps;
            let down = objective(inputs)?.item();
            x.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max((a - numeric).abs() / numeric.abs().max(a.abs()).max(1.0));
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug)]
pub struct KernelCheck {
    pub name: &'static str,
    pub max_rel_err: f64,
}

fn param(rng: &mut ChaCha8Rng, shape: &[usize]) -> Result<Tensor> {
    Tensor::param((0..shape.iter().product()).map(|_| rng.random_range(-1.0..1.0)).collect(), shape)
}

fn one_hot_rows(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut y = vec![0.0; labels.len() * classes];
    for (row, &l) in labels.iter().enumerate() {
        y[row * classes + l] = 1.0;
    }
    Tensor::new(y, &[labels.len(), classes])
}

/// Every differentiable kernel on small random inputs (all dims <= 5).
pub fn kernel_suite() -> Result<Vec<KernelCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut out = Vec::new();
    let mut check = |name: &'static str, xs: &[Tensor], f: &dyn Fn(&[Tensor]) -> Result<Tensor>| -> Result<()> {
        out.push(KernelCheck { name, max_rel_err: max_relative_error(xs, DEFAULT_EPS, f)? });
        Ok(())
    };

    let lin = [param(&mut rng, &[4, 3])?, param(&mut rng, &[5, 3])?, param(&mut rng, &[5])?];
    check("linear", &lin, &|t| ops::linear(&t[0], &t[1], Some(&t[2])))?;

    let c2 = [param(&mut rng, &[2, 2, 5, 5])?, param(&mut rng, &[3, 2, 3, 3])?, param(&mut rng, &[3])?];
    check("conv2d stride 2", &c2, &|t| ops::conv2d(&t[0], &t[1], Some(&t[2]), 2, 1))?;
    check("conv2d stride 1", &c2, &|t| ops::conv2d(&t[0], &t[1], Some(&t[2]), 1, 1))?;

    let c3 = [param(&mut rng, &[1, 2, 4, 4, 4])?, param(&mut rng, &[2, 2, 3, 3, 3])?, param(&mut rng, &[2])?];
    check("conv3d stride 1", &c3, &|t| ops::conv3d(&t[0], &t[1], Some(&t[2]), 1, 1))?;
    check("conv3d stride 2", &c3, &|t| ops::conv3d(&t[0], &t[1], Some(&t[2]), 2, 1))?;

    // keep values away from the kink
    let r: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).map(|v: f64| if v.abs() < 0.05 { v + 0.2 } else { v }).collect();
    check("relu", &[Tensor::param(r, &[4, 5])?], &|t| Ok(ops::relu(&t[0])))?;

    let x2 = param(&mut rng, &[1, 2, 4, 4])?;
    check("max_pool2d", std::slice::from_ref(&x2), &|t| ops::max_pool2d(&t[0]))?;
    check("upsample2d", &[x2], &|t| ops::upsample2d(&t[0], 2))?;
    let x3 = param(&mut rng, &[1, 2, 4, 4, 4])?;
    check("max_pool3d", std::slice::from_ref(&x3), &|t| ops::max_pool3d(&t[0]))?;
    check("upsample3d", &[x3], &|t| ops::upsample3d(&t[0], 2))?;

    let cat = [param(&mut rng, &[2, 3, 2])?, param(&mut rng, &[2, 1, 2])?];
    check("concat", &cat, &|t| ops::concat(&[&t[0], &t[1]], 1))?;
    check("reshape", &cat[..1], &|t| ops::reshape(&t[0], &[3, 4]))?;
    check("channels_last", &cat[..1], &|t| ops::channels_last(&t[0]))?;

    let ew = [param(&mut rng, &[3, 4])?, param(&mut rng, &[3, 4])?];
    check("add", &ew, &|t| ops::add(&t[0], &t[1]))?;
    check("mul", &ew, &|t| ops::mul(&t[0], &t[1]))?;
    check("scale", &ew[..1], &|t| Ok(ops::scale(&t[0], -1.7)))?;
    check("mean", &ew[..1], &|t| Ok(ops::mean(&t[0])))?;
    check("sum", &ew[..1], &|t| Ok(ops::sum(&t[0])))?;

    let target = one_hot_rows(&[3, 0, 4, 1], 5)?;
    check("softmax_cross_entropy", &[param(&mut rng, &[4, 5])?], &|t| ops::softmax_cross_entropy(&t[0], &target))?;

    let a = param(&mut rng, &[3, 4])?;
    // offset keeps every difference well away from zero
    let b = Tensor::param(a.to_vec().iter().enumerate().map(|(i, v)| v + if i % 2 == 0 { 0.3 } else { -0.4 }).collect(), &[3, 4])?;
    check("l1_loss", &[a, b], &|t| ops::l1_loss(&t[0], &t[1]))?;

    let coords2 = [[0.3, 1.7], [2.9, 0.0], [-1.0, 6.0], [1.5, 2.25]];
    check("gather2d", &[param(&mut rng, &[3, 4, 5])?], &|t| ops::gather2d(&t[0], &coords2))?;
    let coords3 = [[0.3, 1.7, 2.2], [1.9, 0.0, 3.5], [5.0, -2.0, 0.4]];
    check("gather3d", &[param(&mut rng, &[2, 3, 4, 5])?], &|t| ops::gather3d(&t[0], &coords3))?;

    // conv -> relu -> pool -> upsample -> concat -> channels_last -> linear -> CE
    let composed = [param(&mut rng, &[1, 2, 4, 4])?, param(&mut rng, &[3, 2, 3, 3])?, param(&mut rng, &[3])?, param(&mut rng, &[5, 6])?];
    let labels: Vec<usize> = (0..16).map(|r| r % 5).collect();
    let target16 = one_hot_rows(&labels, 5)?;
    check("composed graph", &composed, &|t| {
        let h = ops::relu(&ops::conv2d(&t[0], &t[1], Some(&t[2]), 1, 1)?);
        let p = ops::upsample2d(&ops::max_pool2d(&h)?, 2)?;
        let cat = ops::concat(&[&h, &ops::scale(&p, 0.5)], 1)?;
        let logits = ops::linear(&ops::channels_last(&cat)?, &t[3], None)?;
        ops::softmax_cross_entropy(&logits, &target16)
    })?;
    Ok(out)
}
