use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transpose {
    No,
    Yes,
}

/// Row-major GEMM: `C = alpha * op(A) * op(B) + beta * C` where `op(A)` is
/// `m x k`, `op(B)` is `k x n` and `C` is `m x n` with row stride `ldc`.
/// `lda`/`ldb` are the row strides of the matrices as stored.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    ta: Transpose,
    tb: Transpose,
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    lda: usize,
    b: &[f64],
    ldb: usize,
    beta: f64,
    c: &mut [f64],
    ldc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa, a_rows) = match ta {
        Transpose::No => (lda, 1, m),
        Transpose::Yes => (1, lda, k),
    };
    let (rsb, csb, b_rows) = match tb {
        Transpose::No => (ldb, 1, k),
        Transpose::Yes => (1, ldb, n),
    };
    if k > 0 {
        assert!(a.len() >= (a_rows - 1) * lda + if ta == Transpose::No { k } else { m });
        assert!(b.len() >= (b_rows - 1) * ldb + if tb == Transpose::No { n } else { k });
    }
    assert!(c.len() >= (m - 1) * ldc + n);
    if k == 0 {
        for i in 0..m {
            c[i * ldc..i * ldc + n].iter_mut().for_each(|v| *v *= beta);
        }
        return;
    }
    // SAFETY: the asserts above bound every index matrixmultiply touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

/// Affine map `y = x wᵀ + b` with `x: [N, in]`, `w: [out, in]`, `b: [out]`.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
        return Err(TensorError::shape(
            "linear",
            format!("input {xs:?} is not compatible with weight {ws:?} (expected [N, in] and [out, in])"),
        ));
    }
    let (n, fan_in, fan_out) = (xs[0], xs[1], ws[0]);
    if let Some(b) = b {
        if b.shape() != [fan_out] {
            return Err(TensorError::shape("linear", format!("bias {:?} != [{fan_out}]", b.shape())));
        }
    }

    let mut y = vec![0.0; n * fan_out];
    if let Some(b) = b {
        let bd = b.data();
        for row in y.chunks_mut(fan_out) {
            row.copy_from_slice(&bd);
        }
    }
    gemm(
        Transpose::No,
        Transpose::Yes,
        n,
        fan_in,
        fan_out,
        1.0,
        &x.data(),
        fan_in,
        &w.data(),
        fan_in,
        if b.is_some() { 1.0 } else { 0.0 },
        &mut y,
        fan_out,
    );

    let mut parents = vec![x.clone(), w.clone()];
    if let Some(b) = b {
        parents.push(b.clone());
    }
    let (xc, wc, has_bias) = (x.clone(), w.clone(), b.is_some());
    Ok(Tensor::from_op(y, vec![n, fan_out], parents, move |g| {
        let dx = xc.requires_grad().then(|| {
            let mut dx = vec![0.0; n * fan_in];
            gemm(Transpose::No, Transpose::No, n, fan_out, fan_in, 1.0, g, fan_out, &wc.data(), fan_in, 0.0, &mut dx, fan_in);
            dx
        });
        let dw = wc.requires_grad().then(|| {
            let mut dw = vec![0.0; fan_out * fan_in];
            gemm(Transpose::Yes, Transpose::No, fan_out, n, fan_in, 1.0, g, fan_out, &xc.data(), fan_in, 0.0, &mut dw, fan_in);
            dw
        });
        let mut out = vec![dx, dw];
        if has_bias {
            let mut db = vec![0.0; fan_out];
            for row in g.chunks(fan_out) {
                db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
            }
            out.push(Some(db));
        }
        out
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_for_all_transposes() {
        let (m, k, n) = (3, 4, 2);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 1.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).sin()).collect();
        let at = |i: usize, p: usize| a[i * k + p];
        let bt = |p: usize, j: usize| b[p * n + j];
        let mut expect = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                expect[i * n + j] = (0..k).map(|p| at(i, p) * bt(p, j)).sum();
            }
        }
        // Transposed storage of the same operands.
        let a_t: Vec<f64> = (0..k * m).map(|idx| at(idx % m, idx / m)).collect();
        let b_t: Vec<f64> = (0..n * k).map(|idx| bt(idx % k, idx / k)).collect();
        for (ta, aa, lda) in [(Transpose::No, &a, k), (Transpose::Yes, &a_t, m)] {
            for (tb, bb, ldb) in [(Transpose::No, &b, n), (Transpose::Yes, &b_t, k)] {
                let mut c = vec![0.0; m * n];
                gemm(ta, tb, m, k, n, 1.0, aa, lda, bb, ldb, 0.0, &mut c, n);
                for (x, y) in c.iter().zip(&expect) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn linear_rejects_wrong_fan_in() {
        let x = Tensor::zeros(&[2, 3]);
        let w = Tensor::zeros(&[4, 5]);
        assert!(linear(&x, &w, None).is_err());
    }
}
