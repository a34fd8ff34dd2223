use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

fn rows(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [n, c] => Ok((*n, *c)),
        s => Err(TensorError::shape(op, format!("expected [N, C], got {s:?}"))),
    }
}

fn softmax_row(row: &[f64], out: &mut [f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - m).exp();
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
    m + z.ln()
}

/// Row-wise softmax of `[N, C]` logits. Not differentiable (inference only).
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let (n, c) = rows("softmax", logits)?;
    let src = logits.data();
    let mut out = vec![0.0; n * c];
    for (r, o) in src.chunks(c).zip(out.chunks_mut(c)) {
        softmax_row(r, o);
    }
    Tensor::new(out, &[n, c])
}

/// Mean over rows of `-log softmax(logits)[target]` with one-hot `target`.
/// The gradient flows to `logits` only.
pub fn softmax_cross_entropy(logits: &Tensor, target: &Tensor) -> Result<Tensor> {
    let (n, c) = rows("softmax_cross_entropy", logits)?;
    if target.shape() != logits.shape() {
        return Err(TensorError::shape(
            "softmax_cross_entropy",
            format!("target {:?} != logits {:?}", target.shape(), logits.shape()),
        ));
    }
    if n == 0 {
        return Err(TensorError::shape("softmax_cross_entropy", "empty batch"));
    }
    let y = target.to_vec();
    let mut labels = Vec::with_capacity(n);
    for (row, r) in y.chunks(c).enumerate() {
        let ones = r.iter().filter(|&&v| v == 1.0).count();
        let zeros = r.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || zeros != c - 1 {
            return Err(TensorError::NotOneHot { row });
        }
        labels.push(r.iter().position(|&v| v == 1.0).unwrap());
    }

    let src = logits.data();
    let mut probs = vec![0.0; n * c];
    let mut total = 0.0;
    for ((r, p), &lab) in src.chunks(c).zip(probs.chunks_mut(c)).zip(&labels) {
        let lse = softmax_row(r, p);
        total += lse - r[lab];
    }
    drop(src);
    let loss = total / n as f64;
    Ok(Tensor::from_op(vec![loss], Vec::new(), vec![logits.clone(), target.clone()], move |g| {
        let s = g[0] / n as f64;
        let mut d = probs.clone();
        for (row, &lab) in d.chunks_mut(c).zip(&labels) {
            row[lab] -= 1.0;
            row.iter_mut().for_each(|v| *v *= s);
        }
        vec![Some(d), None]
    }))
}

/// Mean absolute difference over all elements.
pub fn l1_loss(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(TensorError::shape(
            "l1_loss",
            format!("operand shapes differ: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let n = a.numel();
    if n == 0 {
        return Err(TensorError::shape("l1_loss", "empty operands"));
    }
    let diff: Vec<f64> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x - y).collect();
    let loss = diff.iter().map(|d| d.abs()).sum::<f64>() / n as f64;
    Ok(Tensor::from_op(vec![loss], Vec::new(), vec![a.clone(), b.clone()], move |g| {
        let s = g[0] / n as f64;
        let da: Vec<f64> = diff
            .iter()
            .map(|&d| if d > 0.0 { s } else if d < 0.0 { -s } else { 0.0 })
            .collect();
        let db = da.iter().map(|v| -v).collect();
        vec![Some(da), Some(db)]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(n: usize, c: usize, labels: &[usize]) -> Tensor {
        let mut v = vec![0.0; n * c];
        for (i, &l) in labels.iter().enumerate() {
            v[i * c + l] = 1.0;
        }
        Tensor::new(v, &[n, c]).unwrap()
    }

    #[test]
    fn uniform_logits_give_ln5() {
        let l = Tensor::new(vec![0.0; 5], &[1, 5]).unwrap();
        let ce = softmax_cross_entropy(&l, &one_hot(1, 5, &[0])).unwrap();
        assert!((ce.item() - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_correct_class() {
        let l = Tensor::new(vec![10.0, -10.0, -10.0, -10.0, -10.0], &[1, 5]).unwrap();
        let ce = softmax_cross_entropy(&l, &one_hot(1, 5, &[0])).unwrap();
        assert!(ce.item() < 1e-4);
    }

    #[test]
    fn soft_target_rejected() {
        let l = Tensor::new(vec![0.0; 5], &[1, 5]).unwrap();
        let t = Tensor::new(vec![0.5, 0.5, 0.0, 0.0, 0.0], &[1, 5]).unwrap();
        assert!(matches!(softmax_cross_entropy(&l, &t), Err(TensorError::NotOneHot { row: 0 })));
    }

    #[test]
    fn ce_matches_explicit_softmax_then_log() {
        let vals = [0.3, -1.2, 2.5, 0.0, 0.7, -0.4, 1.1, -2.0, 0.9, 3.1, 1.5, 1.5, -0.5, 0.2, 0.1, -3.0, 2.2, 0.6, -0.9, 1.0];
        let labels = [2, 4, 0, 1];
        let l = Tensor::new(vals.to_vec(), &[4, 5]).unwrap();
        let ce = softmax_cross_entropy(&l, &one_hot(4, 5, &labels)).unwrap().item();
        let mut expect = 0.0;
        for (r, &lab) in vals.chunks(5).zip(&labels) {
            let z: f64 = r.iter().map(|v| v.exp()).sum();
            expect += -(r[lab].exp() / z).ln();
        }
        expect /= 4.0;
        assert!((ce - expect).abs() < 1e-10);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let l = Tensor::new(vec![1000.0, 0.0, -5.0, 2.0, 2.0, 2.0], &[2, 3]).unwrap();
        let p = softmax(&l).unwrap().to_vec();
        for r in p.chunks(3) {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn l1_fixed_point_is_zero() {
        let a = Tensor::new(vec![1.0, -2.0, 3.5], &[3]).unwrap();
        assert_eq!(l1_loss(&a, &a.detach()).unwrap().item(), 0.0);
    }
}
