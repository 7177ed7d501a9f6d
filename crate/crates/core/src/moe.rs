//! Gating, top-k routing with token splitting, and result aggregation.

use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::task::{DeviceProfile, TaskRequest};

/// Expert selection for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct GatingAssignment<T> {
    pub task_id: u64,
    /// Expert (device) indices, highest raw weight first.
    pub experts: Vec<usize>,
    /// Renormalized over the selected experts; sums to 1.
    pub weights: Vec<T>,
    /// Tokens per selected expert; sums to the task length.
    pub token_split: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RouteError {
    #[error("k = {k} outside 1..={n} experts")]
    BadK { k: usize, n: usize },
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Gating logits: each expert's affinity for the task's band plus
/// Gaussian noise of standard deviation `noise`. Always draws one normal
/// per device so the gating stream advances identically for every scheme.
pub fn gating_logits<T: Scalar>(task: &TaskRequest, devices: &[DeviceProfile], noise: T, rng: &mut RngStream) -> Vec<T> {
    let band = task.band();
    devices
        .iter()
        .map(|d| T::of(d.expert.affinity[band]) + noise * T::of(rng.normal()))
        .collect()
}

pub fn gating_scores<T: Scalar>(task: &TaskRequest, devices: &[DeviceProfile], noise: T, rng: &mut RngStream) -> Vec<T> {
    softmax(&gating_logits(task, devices, noise, rng))
}

/// Picks the `k` largest weights (ties to the lower index), renormalizes
/// them and splits the task's tokens proportionally.
pub fn top_k_route<T: Scalar>(weights: &[T], k: usize, task: &TaskRequest) -> Result<GatingAssignment<T>, RouteError> {
    let n = weights.len();
    if k < 1 || k > n {
        return Err(RouteError::BadK { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal weights keep index order
    order.sort_by(|&a, &b| weights[b].partial_cmp(&weights[a]).unwrap_or(std::cmp::Ordering::Equal));
    order.truncate(k);

    let total: T = order.iter().map(|&i| weights[i]).sum();
    let renorm: Vec<T> = order.iter().map(|&i| weights[i] / total).collect();
    let token_split = split_tokens(task.length, &renorm);
    Ok(GatingAssignment {
        task_id: task.id,
        experts: order,
        weights: renorm,
        token_split,
    })
}

const SNAP: f64 = 1e-9;

/// Apportions `length` tokens by `weights` (summing to 1). Quotas are
/// rounded half-to-even, then a largest-remainder pass fixes the total.
/// Remainders within 1e-9 of each other count as ties, broken toward the
/// lower index.
pub fn split_tokens<T: Scalar>(length: u32, weights: &[T]) -> Vec<u32> {
    if weights.is_empty() {
        return Vec::new();
    }
    let quotas: Vec<f64> = weights.iter().map(|w| length as f64 * w.as_f64()).collect();
    let mut split: Vec<i64> = quotas.iter().map(|&q| round_half_even(q)).collect();
    let mut diff = length as i64 - split.iter().sum::<i64>();

    let residual = |s: &[i64], i: usize| quotas[i] - s[i] as f64;
    while diff != 0 {
        let pick = if diff > 0 {
            // most under-served
            (0..split.len()).fold(0, |best, i| {
                if residual(&split, i) > residual(&split, best) + SNAP {
                    i
                } else {
                    best
                }
            })
        } else {
            (0..split.len())
                .filter(|&i| split[i] > 0)
                .fold(None, |best: Option<usize>, i| match best {
                    Some(b) if residual(&split, i) >= residual(&split, b) - SNAP => Some(b),
                    _ => Some(i),
                })
                .expect("positive total has a positive entry")
        };
        let step = diff.signum();
        split[pick] += step;
        diff -= step;
    }
    split.into_iter().map(|s| s as u32).collect()
}

fn round_half_even(q: f64) -> i64 {
    let floor = q.floor();
    let frac = q - floor;
    let base = floor as i64;
    if (frac - 0.5).abs() < SNAP {
        base + (base & 1)
    } else if frac > 0.5 {
        base + 1
    } else {
        base
    }
}

/// What one expert branch reports back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Partial<T> {
    pub expert: usize,
    pub tokens: u32,
    pub cot_steps: u32,
    /// Uplink passed its CRC check (possibly after one retransmission).
    pub verified: bool,
    /// Downlink + queueing + compute + uplink, from task arrival.
    pub path_time: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskResult<T> {
    pub task_id: u64,
    pub latency: T,
    pub failed: bool,
    pub experts: Vec<usize>,
    pub weights: Vec<T>,
}

/// Combines branch reports: the task finishes when its slowest branch does
/// and fails if any branch is unverified.
pub fn aggregate<T: Scalar>(partials: &[Partial<T>], assignment: &GatingAssignment<T>) -> TaskResult<T> {
    debug_assert_eq!(partials.len(), assignment.experts.len());
    let latency = partials.iter().map(|p| p.path_time).fold(T::zero(), T::max);
    TaskResult {
        task_id: assignment.task_id,
        latency,
        failed: partials.iter().any(|p| !p.verified),
        experts: assignment.experts.clone(),
        weights: assignment.weights.clone(),
    }
}
