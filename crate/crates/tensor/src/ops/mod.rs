//! Differentiable kernels.

mod conv;
mod gather;
mod linear;
mod loss;
mod pool;

pub use conv::{conv2d, conv3d};
pub use gather::{gather2d, gather3d};
pub use linear::{gemm, linear, Transpose};
pub use loss::{l1_loss, softmax, softmax_cross_entropy};
pub use pool::{max_pool2d, max_pool3d, upsample2d, upsample3d};

use crate::error::{Result, TensorError};
use crate::tensor::{numel, Tensor};

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::shape(
            op,
            format!("operand shapes differ: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

/// Elementwise `a + b`. Scalars (one element) broadcast against anything.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.numel() == 1 && b.numel() == 1 {
        let v = a.item() + b.item();
        return Ok(Tensor::from_op(vec![v], Vec::new(), vec![a.clone(), b.clone()], |g| {
            vec![Some(g.to_vec()), Some(g.to_vec())]
        }));
    }
    same_shape("add", a, b)?;
    let data: Vec<f64> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_op(data, a.shape().to_vec(), vec![a.clone(), b.clone()], |g| {
        vec![Some(g.to_vec()), Some(g.to_vec())]
    }))
}

/// Elementwise product.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mul", a, b)?;
    let data: Vec<f64> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).collect();
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(data, a.shape().to_vec(), vec![a.clone(), b.clone()], move |g| {
        let da = g.iter().zip(bc.data().iter()).map(|(g, y)| g * y).collect();
        let db = g.iter().zip(ac.data().iter()).map(|(g, x)| g * x).collect();
        vec![Some(da), Some(db)]
    }))
}

/// `s * a` for a constant `s`.
pub fn scale(a: &Tensor, s: f64) -> Tensor {
    let data = a.data().iter().map(|x| s * x).collect();
    Tensor::from_op(data, a.shape().to_vec(), vec![a.clone()], move |g| {
        vec![Some(g.iter().map(|g| s * g).collect())]
    })
}

pub fn sum(a: &Tensor) -> Tensor {
    let v = a.data().iter().sum();
    let n = a.numel();
    Tensor::from_op(vec![v], Vec::new(), vec![a.clone()], move |g| vec![Some(vec![g[0]; n])])
}

pub fn mean(a: &Tensor) -> Tensor {
    let n = a.numel();
    let v = a.data().iter().sum::<f64>() / n as f64;
    Tensor::from_op(vec![v], Vec::new(), vec![a.clone()], move |g| {
        vec![Some(vec![g[0] / n as f64; n])]
    })
}

pub fn relu(a: &Tensor) -> Tensor {
    let data = a.data().iter().map(|&x| x.max(0.0)).collect();
    let ac = a.clone();
    Tensor::from_op(data, a.shape().to_vec(), vec![a.clone()], move |g| {
        let x = ac.data();
        vec![Some(g.iter().zip(x.iter()).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect())]
    })
}

pub fn reshape(a: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if numel(shape) != a.numel() {
        return Err(TensorError::shape(
            "reshape",
            format!("cannot view {:?} as {shape:?}", a.shape()),
        ));
    }
    Ok(Tensor::from_op(a.to_vec(), shape.to_vec(), vec![a.clone()], |g| vec![Some(g.to_vec())]))
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| TensorError::shape("concat", "no inputs"))?;
    let rank = first.shape().len();
    if axis >= rank {
        return Err(TensorError::shape("concat", format!("axis {axis} out of range for rank {rank}")));
    }
    for p in parts {
        let ok = p.shape().len() == rank
            && (0..rank).all(|d| d == axis || p.shape()[d] == first.shape()[d]);
        if !ok {
            return Err(TensorError::shape(
                "concat",
                format!("shape {:?} incompatible with {:?} along axis {axis}", p.shape(), first.shape()),
            ));
        }
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let widths: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
    let total: usize = widths.iter().sum();

    let mut data = vec![0.0; outer * total];
    let mut off = 0;
    for (p, &w) in parts.iter().zip(&widths) {
        let src = p.data();
        for o in 0..outer {
            data[o * total + off..o * total + off + w].copy_from_slice(&src[o * w..(o + 1) * w]);
        }
        off += w;
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();

    let parents: Vec<Tensor> = parts.iter().map(|&p| p.clone()).collect();
    Ok(Tensor::from_op(data, shape, parents, move |g| {
        let mut grads = Vec::with_capacity(widths.len());
        let mut off = 0;
        for &w in &widths {
            let mut gp = vec![0.0; outer * w];
            for o in 0..outer {
                gp[o * w..(o + 1) * w].copy_from_slice(&g[o * total + off..o * total + off + w]);
            }
            grads.push(Some(gp));
            off += w;
        }
        grads
    }))
}

/// `[N, C, s...]` to `[N * prod(s), C]`, i.e. one row per spatial site.
pub fn channels_last(a: &Tensor) -> Result<Tensor> {
    let shape = a.shape();
    if shape.len() < 3 {
        return Err(TensorError::shape("channels_last", format!("need rank >= 3, got {shape:?}")));
    }
    let (n, c) = (shape[0], shape[1]);
    let s: usize = shape[2..].iter().product();
    let src = a.data();
    let mut data = vec![0.0; n * s * c];
    for b in 0..n {
        for ch in 0..c {
            let plane = &src[(b * c + ch) * s..(b * c + ch + 1) * s];
            for (i, &v) in plane.iter().enumerate() {
                data[(b * s + i) * c + ch] = v;
            }
        }
    }
    drop(src);
    Ok(Tensor::from_op(data, vec![n * s, c], vec![a.clone()], move |g| {
        let mut ga = vec![0.0; n * c * s];
        for b in 0..n {
            for ch in 0..c {
                for i in 0..s {
                    ga[(b * c + ch) * s + i] = g[(b * s + i) * c + ch];
                }
            }
        }
        vec![Some(ga)]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_along_last_axis() {
        let a = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let b = Tensor::new(vec![5.0, 6.0], &[2, 1]).unwrap();
        let c = concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.to_vec(), vec![1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
    }

    #[test]
    fn concat_rejects_mismatched_extent() {
        let a = Tensor::zeros(&[2, 2]);
        let b = Tensor::zeros(&[3, 1]);
        assert!(concat(&[&a, &b], 1).is_err());
    }

    #[test]
    fn channels_last_layout() {
        // N=1, C=2, S=3
        let a = Tensor::new(vec![1.0, 2.0, 3.0, 10.0, 20.0, 30.0], &[1, 2, 3]).unwrap();
        let r = channels_last(&a).unwrap();
        assert_eq!(r.shape(), &[3, 2]);
        assert_eq!(r.to_vec(), vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0]);
    }

    #[test]
    fn add_requires_matching_shapes() {
        assert!(add(&Tensor::zeros(&[2]), &Tensor::zeros(&[3])).is_err());
    }
}
