//! Distributed PPO for the dynamic scheme: parallel rollout workers, one
//! synchronous learner.

pub mod adam;
pub mod checkpoint;
pub mod gae;
pub mod loss;
pub mod net;
pub mod trainer;

use serde::{Deserialize, Serialize};

pub use adam::{clip_grad_norm, Adam};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use gae::{gae, gae_with_dones};
pub use loss::{clipped_objective, loss, net_gradient, LossCoefficients, LossError, LossStats, Sample};
pub use net::{HeadWidths, Linear, PolicyNet};
pub use trainer::{train, DynamicPolicy, TrainError, TrainLogRow, TrainOutcome, Trainer};

/// Trainer hyperparameters. JSON keys match the field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub workers: usize,
    /// Steps per worker per iteration.
    pub horizon: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub clip_eps: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub learning_rate: f64,
    pub max_grad_norm: f64,
    pub iterations: usize,
    pub hidden: usize,
    pub checkpoint_every: usize,
    /// Learner seed; `None` uses the system config seed.
    pub seed: Option<u64>,
    /// Per-worker environment seeds; empty derives them from `seed`.
    pub worker_seeds: Vec<u64>,
    /// Held-out evaluation seeds.
    pub eval_seeds: Vec<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            workers: 4,
            horizon: 256,
            // Tasks are near-independent; long horizons only add return variance.
            gamma: 0.5,
            lambda: 0.5,
            clip_eps: 0.2,
            epochs: 4,
            minibatch: 64,
            value_coef: 0.5,
            entropy_coef: 0.01,
            learning_rate: 3e-4,
            max_grad_norm: 0.5,
            iterations: 300,
            hidden: 64,
            checkpoint_every: 50,
            seed: None,
            worker_seeds: Vec::new(),
            eval_seeds: vec![1001, 1002, 1003],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        let mut errs = Vec::new();
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            errs.push(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            errs.push(format!("lambda must lie in (0, 1], got {}", self.lambda));
        }
        if !(self.clip_eps > 0.0) {
            errs.push(format!("clip_eps must be > 0, got {}", self.clip_eps));
        }
        for (name, v) in [
            ("workers", self.workers),
            ("horizon", self.horizon),
            ("epochs", self.epochs),
            ("minibatch", self.minibatch),
            ("hidden", self.hidden),
        ] {
            if v == 0 {
                errs.push(format!("{name} must be >= 1"));
            }
        }
        if !self.worker_seeds.is_empty() && self.worker_seeds.len() != self.workers {
            errs.push(format!(
                "{} worker_seeds for {} workers",
                self.worker_seeds.len(),
                self.workers
            ));
        }
        if !(self.learning_rate > 0.0) {
            errs.push(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs.join("; "))
        }
    }

    pub fn coefficients(&self) -> LossCoefficients<f64> {
        LossCoefficients {
            clip_eps: self.clip_eps,
            value_coef: self.value_coef,
            entropy_coef: self.entropy_coef,
        }
    }
}
