//! Synchronous DPPO loop.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::env::{Action, Environment, Observation};
use crate::rng::{RngStream, StreamLabel};

use super::adam::{clip_grad_norm, Adam};
use super::checkpoint::{check_widths, save_checkpoint, CheckpointError};
use super::gae::gae_with_dones;
use super::loss::{net_gradient, LossError, Sample};
use super::net::{log_prob, HeadWidths, PolicyNet};
use super::TrainConfig;

/// Learner shuffle stream index, kept clear of worker indices.
const LEARNER_STREAM: u32 = 0xFFFF;

/// One training-log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub iteration: usize,
    pub mean_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub lat_sat: f64,
    pub acc_sat: f64,
    pub energy_mean: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub net: PolicyNet<f64>,
    pub log: Vec<TrainLogRow>,
    pub config_hash: String,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    Config(String),
    #[error("worker/learner width mismatch: {0}")]
    Shape(#[from] CheckpointError),
    #[error("iteration {iteration}: {source}; last good parameters retained")]
    NonFinite {
        iteration: usize,
        source: LossError,
        last_good: Box<PolicyNet<f64>>,
    },
}

/// Head widths the environment's action menus require.
pub fn head_widths(cfg: &SystemConfig) -> HeadWidths {
    HeadWidths {
        k: cfg.k_choices.len(),
        power: cfg.power_levels.len(),
        depth: cfg.d_max as usize + 1,
    }
}

fn head_action(heads: [usize; 3]) -> Action {
    Action::moe(heads[0], heads[1], heads[2] as u32)
}

/// Greedy policy for evaluation: the most likely entry of every head.
#[derive(Debug, Clone)]
pub struct DynamicPolicy {
    pub net: PolicyNet<f64>,
}

impl DynamicPolicy {
    pub fn act(&self, obs: &Observation) -> Action {
        let f = self.net.forward(&obs.0);
        head_action([0, 1, 2].map(|h| argmax(&f.probs[h])))
    }
}

fn argmax(p: &[f64]) -> usize {
    (0..p.len()).fold(0, |best, i| if p[i] > p[best] { i } else { best })
}

fn sample_index(p: &[f64], rng: &mut RngStream) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Samples of one worker for one iteration, advantages attached.
#[derive(Debug, Clone)]
pub struct WorkerBatch {
    pub seed: u64,
    pub samples: Vec<Sample<f64>>,
    pub rewards: Vec<f64>,
    pub latency_ok: usize,
    pub quality_ok: usize,
    pub energy: f64,
}

struct Worker {
    seed: u64,
    env: Environment,
    rng: RngStream,
    obs: Observation,
}

impl Worker {
    fn new(cfg: &SystemConfig, seed: u64) -> Self {
        let mut rng = RngStream::new(seed, StreamLabel::Rollout);
        let mut env = Environment::new(cfg.clone(), seed);
        let obs = env.reset(rng.next_u64());
        Self { seed, env, rng, obs }
    }

    fn rollout(&mut self, net: &PolicyNet<f64>, hp: &TrainConfig) -> WorkerBatch {
        let mut samples = Vec::with_capacity(hp.horizon);
        let mut rewards = Vec::with_capacity(hp.horizon);
        let mut values = Vec::with_capacity(hp.horizon);
        let mut dones = Vec::with_capacity(hp.horizon);
        let (mut latency_ok, mut quality_ok, mut energy) = (0, 0, 0.0);

        for _ in 0..hp.horizon {
            let f = net.forward(&self.obs.0);
            let heads = [0, 1, 2].map(|h| sample_index(&f.probs[h], &mut self.rng));
            let logp: f64 = (0..3).map(|h| log_prob(&f.logits[h], heads[h])).sum();
            let step = self
                .env
                .step(&head_action(heads))
                .expect("head widths match the action menus");
            latency_ok += step.record.latency_ok as usize;
            quality_ok += step.record.quality_ok as usize;
            energy += step.record.energy;
            samples.push(Sample {
                obs: std::mem::take(&mut self.obs.0),
                actions: heads,
                old_logp: logp,
                advantage: 0.0,
                ret: 0.0,
            });
            rewards.push(step.reward);
            values.push(f.value);
            dones.push(step.done);
            self.obs = if step.done {
                self.env.reset(self.rng.next_u64())
            } else {
                step.observation
            };
        }
        let bootstrap = if dones.last().copied().unwrap_or(true) {
            0.0
        } else {
            net.forward(&self.obs.0).value
        };
        let (adv, ret) = gae_with_dones(&rewards, &values, &dones, bootstrap, hp.gamma, hp.lambda);
        for ((s, a), r) in samples.iter_mut().zip(adv).zip(ret) {
            s.advantage = a;
            s.ret = r;
        }
        WorkerBatch {
            seed: self.seed,
            samples,
            rewards,
            latency_ok,
            quality_ok,
            energy,
        }
    }
}

pub struct Trainer {
    cfg: SystemConfig,
    hp: TrainConfig,
    net: PolicyNet<f64>,
    adam: Adam<f64>,
    workers: Vec<Worker>,
    learner_rng: RngStream,
    iteration: usize,
}

impl Trainer {
    pub fn new(cfg: SystemConfig, hp: TrainConfig) -> Result<Self, TrainError> {
        let seed = hp.seed.unwrap_or(cfg.seed);
        let mut init = RngStream::new(seed, StreamLabel::PolicyInit);
        let net = PolicyNet::random(
            Observation::width(cfg.n_devices),
            hp.hidden,
            head_widths(&cfg),
            &mut init,
        );
        Self::with_net(cfg, hp, net)
    }

    /// Starts from an existing network, which must match the environment.
    pub fn with_net(cfg: SystemConfig, hp: TrainConfig, net: PolicyNet<f64>) -> Result<Self, TrainError> {
        hp.validate().map_err(TrainError::Config)?;
        check_widths(
            net.input_width(),
            net.head_widths(),
            Observation::width(cfg.n_devices),
            head_widths(&cfg),
        )?;
        let seed = hp.seed.unwrap_or(cfg.seed);
        let seeds: Vec<u64> = if hp.worker_seeds.is_empty() {
            (0..hp.workers as u64)
                .map(|w| seed.wrapping_mul(1_000_003).wrapping_add(w + 1))
                .collect()
        } else {
            hp.worker_seeds.clone()
        };
        let workers = seeds.into_iter().map(|s| Worker::new(&cfg, s)).collect();
        Ok(Self {
            adam: Adam::new(hp.learning_rate, net.param_count()),
            learner_rng: RngStream::indexed(seed, StreamLabel::Rollout, LEARNER_STREAM),
            cfg,
            hp,
            net,
            workers,
            iteration: 0,
        })
    }

    pub fn net(&self) -> &PolicyNet<f64> {
        &self.net
    }

    pub fn config(&self) -> &SystemConfig {
        &self.cfg
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Rolls out every worker in parallel against a read-only snapshot of
    /// the parameters. Batches come back ordered by worker seed.
    pub fn collect(&mut self) -> Vec<WorkerBatch> {
        let net = &self.net;
        let hp = &self.hp;
        let mut batches: Vec<WorkerBatch> = self.workers.par_iter_mut().map(|w| w.rollout(net, hp)).collect();
        batches.sort_by_key(|b| b.seed);
        batches
    }

    /// One rollout phase followed by one learner phase.
    pub fn iterate(&mut self) -> Result<TrainLogRow, TrainError> {
        let batches = self.collect();
        let steps: usize = batches.iter().map(|b| b.rewards.len()).sum();
        let mean_reward = batches.iter().flat_map(|b| &b.rewards).sum::<f64>() / steps as f64;
        let lat_sat = batches.iter().map(|b| b.latency_ok).sum::<usize>() as f64 / steps as f64;
        let acc_sat = batches.iter().map(|b| b.quality_ok).sum::<usize>() as f64 / steps as f64;
        let energy_mean = batches.iter().map(|b| b.energy).sum::<f64>() / steps as f64;

        let mut pool: Vec<Sample<f64>> = batches.into_iter().flat_map(|b| b.samples).collect();
        normalize_advantages(&mut pool);

        let last_good = self.net.clone();
        let coef = self.hp.coefficients();
        let mut order: Vec<usize> = (0..pool.len()).collect();
        let (mut policy, mut value, mut entropy, mut updates) = (0.0, 0.0, 0.0, 0usize);
        for _ in 0..self.hp.epochs {
            self.learner_rng.shuffle(&mut order);
            for chunk in order.chunks(self.hp.minibatch) {
                let batch: Vec<Sample<f64>> = chunk.iter().map(|&i| pool[i].clone()).collect();
                let (mut grad, stats) = match net_gradient(&self.net, &batch, &coef) {
                    Ok(ok) => ok,
                    Err(source) => {
                        self.net = last_good.clone();
                        return Err(TrainError::NonFinite {
                            iteration: self.iteration,
                            source,
                            last_good: Box::new(last_good),
                        });
                    }
                };
                clip_grad_norm(&mut grad, self.hp.max_grad_norm);
                self.adam.step(&mut self.net, &grad);
                policy += stats.policy;
                value += stats.value;
                entropy += stats.entropy;
                updates += 1;
            }
        }
        if !self.net.is_finite() {
            self.net = last_good.clone();
            return Err(TrainError::NonFinite {
                iteration: self.iteration,
                source: LossError::NonFinite {
                    policy: f64::NAN,
                    value: f64::NAN,
                    entropy: f64::NAN,
                },
                last_good: Box::new(last_good),
            });
        }
        let n = updates.max(1) as f64;
        let row = TrainLogRow {
            iteration: self.iteration,
            mean_reward,
            policy_loss: policy / n,
            value_loss: value / n,
            entropy: entropy / n,
            lat_sat,
            acc_sat,
            energy_mean,
        };
        self.iteration += 1;
        Ok(row)
    }
}

fn normalize_advantages(pool: &mut [Sample<f64>]) {
    let n = pool.len() as f64;
    if n < 2.0 {
        return;
    }
    let mean = pool.iter().map(|s| s.advantage).sum::<f64>() / n;
    let var = pool.iter().map(|s| (s.advantage - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt() + 1e-8;
    for s in pool {
        s.advantage = (s.advantage - mean) / sd;
    }
}

/// Runs `hp.iterations` iterations. With `out_dir`, writes
/// `checkpoint_<iter>.json` every `checkpoint_every` iterations and
/// `policy.json` at the end. `on_row` sees every log row as it is produced.
pub fn train(
    cfg: &SystemConfig,
    hp: &TrainConfig,
    out_dir: Option<&Path>,
    mut on_row: impl FnMut(&TrainLogRow),
) -> Result<TrainOutcome, TrainError> {
    let hash = cfg.hash();
    let mut trainer = Trainer::new(cfg.clone(), hp.clone())?;
    let mut log = Vec::with_capacity(hp.iterations);
    let save = |net: &PolicyNet<f64>, name: String| -> Result<(), TrainError> {
        if let Some(dir) = out_dir {
            save_checkpoint(net, &hash, &dir.join(name))?;
        }
        Ok(())
    };
    for _ in 0..hp.iterations {
        let row = match trainer.iterate() {
            Ok(row) => row,
            Err(e) => {
                if let TrainError::NonFinite { last_good, .. } = &e {
                    save(last_good, "last_good.json".into())?;
                }
                return Err(e);
            }
        };
        on_row(&row);
        log.push(row);
        let done = trainer.iteration();
        if hp.checkpoint_every > 0 && done % hp.checkpoint_every == 0 {
            save(trainer.net(), format!("checkpoint_{done:05}.json"))?;
        }
    }
    save(trainer.net(), "policy.json".into())?;
    Ok(TrainOutcome {
        net: trainer.net,
        log,
        config_hash: hash,
    })
}
