//! Clipped PPO loss and its exact gradient.
//!
//! `loss = policy + value_coef * value - entropy_coef * entropy` with
//! * `policy = -mean(min(r A, clip(r, 1 - eps, 1 + eps) A))`,
//!   `r = exp(logp_new - logp_old)`, `logp` summed over the three heads,
//! * `value = mean((V - R)^2)`,
//! * `entropy = mean(sum of head entropies)`.

use crate::scalar::Scalar;

use super::net::{entropy, log_prob, PolicyNet};

/// One training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub obs: Vec<T>,
    /// Chosen index per head.
    pub actions: [usize; 3],
    /// Joint log-probability under the behaviour policy.
    pub old_logp: T,
    pub advantage: T,
    pub ret: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCoefficients<T> {
    pub clip_eps: T,
    pub value_coef: T,
    pub entropy_coef: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossStats<T> {
    pub total: T,
    pub policy: T,
    pub value: T,
    pub entropy: T,
}

impl<T: Scalar> LossStats<T> {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.policy.is_finite() && self.value.is_finite() && self.entropy.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("empty minibatch")]
    Empty,
    #[error("non-finite loss (policy {policy}, value {value}, entropy {entropy})")]
    NonFinite { policy: f64, value: f64, entropy: f64 },
}

/// Per-sample clipped surrogate `min(r A, clip(r) A)`.
pub fn clipped_objective<T: Scalar>(ratio: T, advantage: T, eps: T) -> T {
    let clipped = ratio.max(T::one() - eps).min(T::one() + eps);
    (ratio * advantage).min(clipped * advantage)
}

/// Loss value only; the finite-difference oracle evaluates this.
pub fn loss<T: Scalar>(net: &PolicyNet<T>, batch: &[Sample<T>], coef: &LossCoefficients<T>) -> LossStats<T> {
    let n = T::of(batch.len() as f64);
    let mut stats = LossStats::default();
    for s in batch {
        let f = net.forward(&s.obs);
        let logp: T = (0..3).map(|h| log_prob(&f.logits[h], s.actions[h])).sum();
        let ratio = (logp - s.old_logp).exp();
        stats.policy -= clipped_objective(ratio, s.advantage, coef.clip_eps);
        stats.value += (f.value - s.ret).powi(2);
        stats.entropy += f.probs.iter().map(|p| entropy(p)).sum::<T>();
    }
    stats.policy /= n;
    stats.value /= n;
    stats.entropy /= n;
    stats.total = stats.policy + coef.value_coef * stats.value - coef.entropy_coef * stats.entropy;
    stats
}

/// Analytic gradient of [`loss`] with respect to every parameter.
pub fn net_gradient<T: Scalar>(
    net: &PolicyNet<T>,
    batch: &[Sample<T>],
    coef: &LossCoefficients<T>,
) -> Result<(PolicyNet<T>, LossStats<T>), LossError> {
    if batch.is_empty() {
        return Err(LossError::Empty);
    }
    let n = T::of(batch.len() as f64);
    let mut grad = net.zeros_like();
    let mut stats = LossStats::default();

    for s in batch {
        let f = net.forward(&s.obs);
        let logp: T = (0..3).map(|h| log_prob(&f.logits[h], s.actions[h])).sum();
        let ratio = (logp - s.old_logp).exp();
        let objective = clipped_objective(ratio, s.advantage, coef.clip_eps);
        stats.policy -= objective;
        stats.value += (f.value - s.ret).powi(2);
        let head_entropy: [T; 3] = [0, 1, 2].map(|h| entropy(&f.probs[h]));
        stats.entropy += head_entropy.iter().copied().sum::<T>();

        // the unclipped branch carries the gradient; a strictly smaller
        // clipped branch is flat in the parameters
        let unclipped = ratio * s.advantage;
        let dobj = if unclipped <= objective { unclipped } else { T::zero() };
        let dlogp = -dobj / n;

        let dlogits: [Vec<T>; 3] = [0, 1, 2].map(|h| {
            let p = &f.probs[h];
            let hh = head_entropy[h];
            p.iter()
                .enumerate()
                .map(|(j, &pj)| {
                    let onehot = if j == s.actions[h] { T::one() } else { T::zero() };
                    let policy = dlogp * (onehot - pj);
                    // dH/dz_j = -p_j (ln p_j + H)
                    let dentropy = -pj * (pj.ln() + hh);
                    policy - coef.entropy_coef * dentropy / n
                })
                .collect()
        });
        let dvalue = coef.value_coef * T::of(2.0) * (f.value - s.ret) / n;
        net.backward(&s.obs, &f, &dlogits, dvalue, &mut grad);
    }
    stats.policy /= n;
    stats.value /= n;
    stats.entropy /= n;
    stats.total = stats.policy + coef.value_coef * stats.value - coef.entropy_coef * stats.entropy;
    if !stats.is_finite() {
        return Err(LossError::NonFinite {
            policy: stats.policy.as_f64(),
            value: stats.value.as_f64(),
            entropy: stats.entropy.as_f64(),
        });
    }
    Ok((grad, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_rule_examples() {
        assert!((clipped_objective(1.5, 1.0, 0.2) - 1.2f64).abs() < 1e-15);
        assert!((clipped_objective(0.5, -1.0, 0.2) - -0.8f64).abs() < 1e-15);
        assert_eq!(clipped_objective(1.1, 2.0, 0.2), 2.2);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let net = PolicyNet::<f64>::zeros(3, 4, super::super::net::HeadWidths { k: 2, power: 2, depth: 2 });
        let coef = LossCoefficients { clip_eps: 0.2, value_coef: 0.5, entropy_coef: 0.01 };
        assert_eq!(net_gradient(&net, &[], &coef).unwrap_err(), LossError::Empty);
    }
}
