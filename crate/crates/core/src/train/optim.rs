use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(params: &[Tensor<T>], beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            weight_decay,
            t: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64) {
        assert_eq!(params.len(), grads.len());
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::from_f64_lossy(self.beta1), T::from_f64_lossy(self.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let step = T::from_f64_lossy(lr / bc1);
        let inv_bc2 = T::from_f64_lossy(1.0 / bc2);
        let eps = T::from_f64_lossy(self.eps);
        let decay = T::one() - T::from_f64_lossy(lr * self.weight_decay);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *p = *p * decay - step * *m / ((*v * inv_bc2).sqrt() + eps);
            }
        }
    }
}

/// Global L2 norm of all gradients, accumulated in `f64`.
pub fn global_norm<T: Scalar>(grads: &[Tensor<T>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm.is_finite() && norm > max_norm {
        let s = T::from_f64_lossy(max_norm / norm);
        for g in grads.iter_mut() {
            g.scale_in_place(s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> Vec<Tensor<f64>> {
        vec![Tensor::from_fn(&[3], |i| i as f64 - 1.0), Tensor::full(&[2, 2], 0.5)]
    }

    fn grads() -> Vec<Tensor<f64>> {
        vec![
            Tensor::from_fn(&[3], |i| 0.3 * i as f64 + 0.1),
            Tensor::full(&[2, 2], -0.2),
        ]
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let mut p = params();
        let mut opt = AdamW::new(&p, 0.9, 0.999, 1e-8, 0.01);
        opt.step(&mut p, &grads(), 0.0);
        assert_eq!(p, params());
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = params();
        let mut opt = AdamW::new(&p, 0.9, 0.999, 1e-12, 0.0);
        opt.step(&mut p, &grads(), 1e-3);
        for (a, b) in p.iter().zip(params()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!(((y - x).abs() - 1e-3).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn decoupled_decay_with_zero_gradient() {
        let mut p = params();
        let mut opt = AdamW::new(&p, 0.9, 0.999, 1e-8, 0.1);
        let zero: Vec<_> = p.iter().map(|t| Tensor::zeros(t.shape())).collect();
        opt.step(&mut p, &zero, 0.5);
        for (a, b) in p.iter().zip(params()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y * 0.95).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn clipping_halves_a_double_norm_gradient() {
        let mut g = grads();
        let n = global_norm(&g);
        let before = g.clone();
        let reported = clip_global_norm(&mut g, n / 2.0);
        assert_eq!(reported, n);
        for (a, b) in g.iter().zip(&before) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - 0.5 * y).abs() < 1e-15);
            }
        }
        let mut h = grads();
        clip_global_norm(&mut h, f64::INFINITY);
        assert_eq!(h, grads());
    }
}
