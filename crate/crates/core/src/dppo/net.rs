//! Actor-critic MLP: two tanh hidden layers, three categorical heads
//! (k, power, depth) and a scalar value head.

use serde::{Deserialize, Serialize};

use crate::moe::softmax;
use crate::rng::RngStream;
use crate::scalar::Scalar;

/// Dense layer; `w` is row-major `rows x cols` (out x in).
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            w: vec![T::zero(); rows * cols],
            b: vec![T::zero(); rows],
        }
    }

    /// Gaussian weights with standard deviation `gain / sqrt(cols)`, zero bias.
    pub fn random(rows: usize, cols: usize, gain: f64, rng: &mut RngStream) -> Self {
        let scale = gain / (cols as f64).sqrt();
        let w = (0..rows * cols).map(|_| T::of(rng.normal() * scale)).collect();
        Self {
            rows,
            cols,
            w,
            b: vec![T::zero(); rows],
        }
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.cols);
        self.w
            .chunks_exact(self.cols)
            .zip(&self.b)
            .map(|(row, &b)| row.iter().zip(x).fold(b, |acc, (&w, &xi)| acc + w * xi))
            .collect()
    }

    /// Accumulates `dy x^T` into `grad` and returns `W^T dy`.
    pub(crate) fn backward(&self, x: &[T], dy: &[T], grad: &mut Linear<T>) -> Vec<T> {
        let mut dx = vec![T::zero(); self.cols];
        for (r, &g) in dy.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            grad.b[r] += g;
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            let grow = &mut grad.w[r * self.cols..(r + 1) * self.cols];
            for c in 0..self.cols {
                grow[c] += g * x[c];
                dx[c] += g * row[c];
            }
        }
        dx
    }
}

/// Widths of the three action heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadWidths {
    pub k: usize,
    pub power: usize,
    pub depth: usize,
}

impl HeadWidths {
    pub fn as_array(&self) -> [usize; 3] {
        [self.k, self.power, self.depth]
    }
}

/// Head names in output order.
pub const HEAD_NAMES: [&str; 3] = ["k", "power", "depth"];

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet<T> {
    pub hidden1: Linear<T>,
    pub hidden2: Linear<T>,
    pub heads: [Linear<T>; 3],
    pub value: Linear<T>,
}

/// Forward pass with the activations backprop needs.
#[derive(Debug, Clone)]
pub struct Forward<T> {
    pub(crate) h1: Vec<T>,
    pub(crate) h2: Vec<T>,
    pub logits: [Vec<T>; 3],
    pub probs: [Vec<T>; 3],
    pub value: T,
}

impl<T: Scalar> PolicyNet<T> {
    pub fn zeros(input: usize, hidden: usize, heads: HeadWidths) -> Self {
        Self {
            hidden1: Linear::zeros(hidden, input),
            hidden2: Linear::zeros(hidden, hidden),
            heads: heads.as_array().map(|w| Linear::zeros(w, hidden)),
            value: Linear::zeros(1, hidden),
        }
    }

    /// Trunk at unit gain, near-uniform policy heads, unit-gain value head.
    pub fn random(input: usize, hidden: usize, heads: HeadWidths, rng: &mut RngStream) -> Self {
        Self {
            hidden1: Linear::random(hidden, input, 1.0, rng),
            hidden2: Linear::random(hidden, hidden, 1.0, rng),
            heads: heads.as_array().map(|w| Linear::random(w, hidden, 0.01, rng)),
            value: Linear::random(1, hidden, 1.0, rng),
        }
    }

    pub fn input_width(&self) -> usize {
        self.hidden1.cols
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden1.rows
    }

    pub fn head_widths(&self) -> HeadWidths {
        HeadWidths {
            k: self.heads[0].rows,
            power: self.heads[1].rows,
            depth: self.heads[2].rows,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_width(), self.hidden_width(), self.head_widths())
    }

    pub fn layers(&self) -> [&Linear<T>; 6] {
        let [k, p, d] = &self.heads;
        [&self.hidden1, &self.hidden2, k, p, d, &self.value]
    }

    pub fn layers_mut(&mut self) -> [&mut Linear<T>; 6] {
        let [k, p, d] = &mut self.heads;
        [&mut self.hidden1, &mut self.hidden2, k, p, d, &mut self.value]
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &T> + '_ {
        self.layers().into_iter().flat_map(|l| l.w.iter().chain(l.b.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut T> + '_ {
        self.layers_mut()
            .into_iter()
            .flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    pub fn forward(&self, obs: &[T]) -> Forward<T> {
        let h1: Vec<T> = self.hidden1.apply(obs).into_iter().map(T::tanh).collect();
        let h2: Vec<T> = self.hidden2.apply(&h1).into_iter().map(T::tanh).collect();
        let logits = [0, 1, 2].map(|i| self.heads[i].apply(&h2));
        let probs = [0, 1, 2].map(|i| softmax(&logits[i]));
        let value = self.value.apply(&h2)[0];
        Forward {
            h1,
            h2,
            logits,
            probs,
            value,
        }
    }

    /// Backpropagates head-logit and value gradients of one sample into
    /// `grad`.
    pub(crate) fn backward(&self, obs: &[T], fwd: &Forward<T>, dlogits: &[Vec<T>; 3], dvalue: T, grad: &mut Self) {
        let mut dh2 = vec![T::zero(); self.hidden_width()];
        for i in 0..3 {
            let d = self.heads[i].backward(&fwd.h2, &dlogits[i], &mut grad.heads[i]);
            dh2.iter_mut().zip(d).for_each(|(a, b)| *a += b);
        }
        let d = self.value.backward(&fwd.h2, &[dvalue], &mut grad.value);
        dh2.iter_mut().zip(d).for_each(|(a, b)| *a += b);

        let da2: Vec<T> = dh2.iter().zip(&fwd.h2).map(|(&g, &h)| g * (T::one() - h * h)).collect();
        let dh1 = self.hidden2.backward(&fwd.h1, &da2, &mut grad.hidden2);
        let da1: Vec<T> = dh1.iter().zip(&fwd.h1).map(|(&g, &h)| g * (T::one() - h * h)).collect();
        self.hidden1.backward(obs, &da1, &mut grad.hidden1);
    }
}

/// Log-probability of `index` under `logits`.
pub fn log_prob<T: Scalar>(logits: &[T], index: usize) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<T>().ln();
    logits[index] - lse
}

/// Shannon entropy (nats) of a distribution.
pub fn entropy<T: Scalar>(probs: &[T]) -> T {
    probs
        .iter()
        .filter(|&&p| p > T::zero())
        .map(|&p| -p * p.ln())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamLabel;

    fn widths() -> HeadWidths {
        HeadWidths { k: 3, power: 4, depth: 6 }
    }

    #[test]
    fn zero_net_is_uniform_with_zero_value() {
        let net = PolicyNet::<f64>::zeros(47, 64, widths());
        let f = net.forward(&[0.3; 47]);
        for (p, w) in f.probs.iter().zip([3, 4, 6]) {
            assert!(p.iter().all(|&x| (x - 1.0 / w as f64).abs() < 1e-15));
        }
        assert_eq!(f.value, 0.0);
    }

    #[test]
    fn random_net_heads_are_distributions() {
        let mut rng = RngStream::new(1, StreamLabel::PolicyInit);
        let net = PolicyNet::<f64>::random(47, 64, widths(), &mut rng);
        assert_eq!(net.param_count(), 64 * 47 + 64 + 64 * 64 + 64 + 13 * 64 + 13 + 65);
        for s in 0..20 {
            let obs: Vec<f64> = (0..47).map(|i| ((i * 7 + s) % 11) as f64 / 11.0).collect();
            let f = net.forward(&obs);
            for p in &f.probs {
                assert!(p.iter().all(|&x| x > 0.0));
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(entropy(p) >= 0.0);
            }
            let again = net.forward(&obs);
            assert_eq!(f.value.to_bits(), again.value.to_bits());
        }
    }

    #[test]
    fn f32_net_runs() {
        let mut rng = RngStream::new(1, StreamLabel::PolicyInit);
        let net = PolicyNet::<f32>::random(5, 8, widths(), &mut rng);
        let f = net.forward(&[0.1; 5]);
        assert!((f.probs[2].iter().sum::<f32>() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn log_prob_matches_softmax() {
        let logits = [0.3f64, -1.2, 2.0];
        let p = softmax(&logits);
        for i in 0..3 {
            assert!((log_prob(&logits, i) - p[i].ln()).abs() < 1e-12);
        }
    }
}
