use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Classic (heavy-ball) momentum SGD: `v <- momentum * v + g`, `p <- p - lr * v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64) -> Self {
        Sgd { momentum, velocity: Vec::new() }
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    /// Velocity buffers, one per parameter in the order passed to [`Sgd::step`].
    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    /// Applies one update. `params` must be passed in the same order every step.
    pub fn step(&mut self, params: &[Tensor], lr: f64) -> Result<()> {
        let grads = params
            .iter()
            .enumerate()
            .map(|(index, p)| p.grad().ok_or(TensorError::MissingGrad { index }))
            .collect::<Result<Vec<_>>>()?;
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        }
        for ((p, g), v) in params.iter().zip(&grads).zip(self.velocity.iter_mut()) {
            let mut data = p.data_mut();
            for ((x, &g), v) in data.iter_mut().zip(g).zip(v.iter_mut()) {
                *v = self.momentum * *v + g;
                *x -= lr * *v;
            }
        }
        Ok(())
    }
}

pub fn zero_grad(params: &[Tensor]) {
    params.iter().for_each(Tensor::zero_grad);
}

/// Learning rate after step decay: `lr0 * factor^floor(epoch / period)`.
pub fn step_decay(lr0: f64, factor: f64, period: usize, epoch: usize) -> f64 {
    if period == 0 {
        return lr0;
    }
    lr0 * factor.powi((epoch / period) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_grad(p: f64, g: f64) -> Tensor {
        let t = Tensor::param(vec![p], &[1]).unwrap();
        t.zero_grad();
        crate::ops::sum(&crate::ops::scale(&t, g)).backward().unwrap();
        t
    }

    #[test]
    fn plain_sgd() {
        let p = with_grad(1.0, 1.0);
        Sgd::new(0.0).step(&[p.clone()], 0.1).unwrap();
        assert!((p.item() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn momentum_update_from_existing_velocity() {
        let p = with_grad(1.0, 1.0);
        let mut opt = Sgd { momentum: 0.98, velocity: vec![vec![1.0]] };
        opt.step(&[p.clone()], 0.1).unwrap();
        assert!((opt.velocity[0][0] - 1.98).abs() < 1e-15);
        assert!((p.item() - 0.802).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_follows_geometric_series() {
        let (mu, lr, g) = (0.9, 0.05, 2.0);
        let p = with_grad(0.0, g);
        let mut opt = Sgd::new(mu);
        opt.step(&[p.clone()], lr).unwrap();
        opt.step(&[p.clone()], lr).unwrap();
        // v1 = g, v2 = g (1 + mu); p = -lr (v1 + v2)
        assert!((opt.velocity[0][0] - g * (1.0 + mu)).abs() < 1e-15);
        assert!((p.item() + lr * g * (2.0 + mu)).abs() < 1e-15);
    }

    #[test]
    fn missing_grad_is_an_error() {
        let p = Tensor::param(vec![1.0], &[1]).unwrap();
        assert!(matches!(Sgd::new(0.9).step(&[p], 0.1), Err(TensorError::MissingGrad { index: 0 })));
    }

    #[test]
    fn zero_lr_leaves_params_bitwise() {
        let p = with_grad(0.123456789, 3.0);
        Sgd::new(0.98).step(&[p.clone()], 0.0).unwrap();
        assert_eq!(p.item().to_bits(), 0.123456789f64.to_bits());
    }

    #[test]
    fn decay_schedule() {
        assert_eq!(step_decay(0.01, 0.1, 100, 99), 0.01);
        assert_eq!(step_decay(0.01, 0.1, 100, 100), 0.01 * 0.1);
        assert_eq!(step_decay(0.01, 0.1, 100, 399), 0.01 * 0.1f64.powi(3));
    }
}
