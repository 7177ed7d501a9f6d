use crate::scalar::Scalar;

use super::net::PolicyNet;

/// Adam over the flattened parameter vector.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: T, params: usize) -> Self {
        Self {
            lr,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
            m: vec![T::zero(); params],
            v: vec![T::zero(); params],
            t: 0,
        }
    }

    pub fn step(&mut self, net: &mut PolicyNet<T>, grad: &PolicyNet<T>) {
        self.t += 1;
        let c1 = T::one() - self.beta1.powi(self.t);
        let c2 = T::one() - self.beta2.powi(self.t);
        for (((p, &g), m), v) in net.params_mut().zip(grad.params()).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (T::one() - self.beta1) * g;
            *v = self.beta2 * *v + (T::one() - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Scales `grad` so its global L2 norm is at most `max_norm`; returns the
/// norm before scaling.
pub fn clip_grad_norm<T: Scalar>(grad: &mut PolicyNet<T>, max_norm: T) -> T {
    let norm = grad.params().map(|&g| g * g).sum::<T>().sqrt();
    if norm > max_norm && norm > T::zero() {
        let scale = max_norm / norm;
        grad.params_mut().for_each(|g| *g *= scale);
    }
    norm
}
