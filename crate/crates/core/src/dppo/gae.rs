//! Generalized advantage estimation.

use crate::scalar::Scalar;

/// Advantages and returns for one trajectory without terminal states
/// inside it. `bootstrap` is the value estimate after the last step.
pub fn gae<T: Scalar>(rewards: &[T], values: &[T], bootstrap: T, gamma: T, lambda: T) -> (Vec<T>, Vec<T>) {
    gae_with_dones(rewards, values, &vec![false; rewards.len()], bootstrap, gamma, lambda)
}

/// GAE where `dones[t]` cuts both the bootstrap and the recursion after
/// step `t`.
pub fn gae_with_dones<T: Scalar>(
    rewards: &[T],
    values: &[T],
    dones: &[bool],
    bootstrap: T,
    gamma: T,
    lambda: T,
) -> (Vec<T>, Vec<T>) {
    assert_eq!(rewards.len(), values.len());
    assert_eq!(rewards.len(), dones.len());
    let n = rewards.len();
    let mut adv = vec![T::zero(); n];
    let mut next_value = bootstrap;
    let mut next_adv = T::zero();
    for t in (0..n).rev() {
        let live = if dones[t] { T::zero() } else { T::one() };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(&a, &v)| a + v).collect();
    (adv, returns)
}
