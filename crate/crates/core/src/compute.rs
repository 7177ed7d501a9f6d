//! Expert-side cost model.

use crate::config::SystemConfig;
use crate::scalar::Scalar;

/// Work and output size of one token batch at a given CoT depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardCost<T> {
    pub flops: T,
    pub output_bits: T,
    /// `1 + d`.
    pub passes: u32,
}

/// Per-token cost constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel<T> {
    pub bits_per_token: T,
    pub cot_payload_factor: T,
}

impl<T: Scalar> CostModel<T> {
    pub fn from_config(cfg: &SystemConfig) -> Self {
        Self {
            bits_per_token: T::of(cfg.bits_per_token),
            cot_payload_factor: T::of(cfg.cot_payload_factor),
        }
    }

    /// Every CoT step is one more full forward pass and adds
    /// `cot_payload_factor` of the base payload to the output.
    pub fn forward_cost(&self, tokens: u32, depth: u32, flops_per_token: T) -> ForwardCost<T> {
        let tokens = T::of(tokens as f64);
        let passes = 1 + depth;
        ForwardCost {
            flops: tokens * flops_per_token * T::of(passes as f64),
            output_bits: tokens * self.bits_per_token * (T::one() + self.cot_payload_factor * T::of(depth as f64)),
            passes,
        }
    }

    /// Bits sent on the downlink for a batch: the input embeddings only.
    pub fn input_bits(&self, tokens: u32) -> T {
        T::of(tokens as f64) * self.bits_per_token
    }
}

/// A processor that executes batches: an edge device or the BS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Executor<T> {
    /// FLOPs per second.
    pub throughput: T,
    /// Joules per FLOP.
    pub kappa: T,
}

impl<T: Scalar> Executor<T> {
    pub fn device(cfg: &SystemConfig) -> Self {
        Self {
            throughput: T::of(cfg.device_tflops),
            kappa: T::of(cfg.kappa_device),
        }
    }

    pub fn base_station(cfg: &SystemConfig) -> Self {
        Self {
            throughput: T::of(cfg.bs_tflops),
            kappa: T::of(cfg.kappa_bs),
        }
    }

    /// `(latency, energy)` of running `cost`. Work beyond the slot budget
    /// just shows up as latency; the deadline check happens downstream.
    pub fn execute(&self, cost: &ForwardCost<T>) -> (T, T) {
        (cost.flops / self.throughput, self.kappa * cost.flops)
    }
}
