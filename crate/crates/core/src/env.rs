//! Time-slotted environment: one step resolves one task end to end.
//!
//! Tasks arrive at slot boundaries. Within a slot each device is a single
//! sequential queue that covers compute and its uplink; device queues are
//! cleared at the next slot. The downlink band is shared equally among the
//! devices served so far in the slot.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::channel::{packet_error, Channel};
use crate::compute::{CostModel, Executor};
use crate::config::SystemConfig;
use crate::crc::crc32;
use crate::moe::{aggregate, gating_scores, top_k_route, Partial};
use crate::quality::QualityModel;
use crate::rng::{RngStream, StreamLabel};
use crate::task::{build_devices, sample_slot, DeviceProfile, TaskRequest};

/// Joint control decision for one task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    /// Index into `k_choices`.
    pub k_index: usize,
    /// Index into `power_levels`.
    pub power_index: usize,
    /// CoT depth.
    pub depth: u32,
    /// Run the dense model at the BS; the other fields are ignored.
    pub at_bs: bool,
}

impl Action {
    pub fn dense() -> Self {
        Self {
            k_index: 0,
            power_index: 0,
            depth: 0,
            at_bs: true,
        }
    }

    pub fn moe(k_index: usize, power_index: usize, depth: u32) -> Self {
        Self {
            k_index,
            power_index,
            depth,
            at_bs: false,
        }
    }
}

/// Fixed-width state vector: `[length / token_cap, complexity]` followed by
/// one `(gain, free, affinity)` triple per device, where
/// * `gain` is `log2(1 + snr) / 10` for `p_max` over the whole downlink band,
/// * `free` is the fraction of the slot not yet claimed on the device queue,
/// * `affinity` is the device expert's gating bias for the task's band.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn width(n_devices: usize) -> usize {
        2 + 3 * n_devices
    }

    pub fn length(&self) -> f64 {
        self.0[0]
    }

    pub fn complexity(&self) -> f64 {
        self.0[1]
    }
}

/// Outcome of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub slot: usize,
    pub task_id: u64,
    pub length: u32,
    pub complexity: f64,
    pub action: Action,
    pub k: usize,
    /// Watts; 0 for BS execution.
    pub power: f64,
    pub experts: Vec<usize>,
    /// Downlink + compute + uplink + retransmissions, joules.
    pub energy: f64,
    pub latency: f64,
    pub quality: f64,
    pub retransmissions: u32,
    pub latency_ok: bool,
    pub quality_ok: bool,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub total_energy: f64,
    pub acc_sat_rate: f64,
    pub lat_sat_rate: f64,
    pub tasks: usize,
    pub failed: usize,
    /// No tasks were recorded; both rates are reported as 0.
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("invalid action: {field} = {value} (limit {limit})")]
    InvalidAction {
        field: &'static str,
        value: usize,
        limit: usize,
    },
    #[error("episode finished; call reset")]
    Finished,
}

#[derive(Debug)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub record: SlotRecord,
    pub done: bool,
}

/// `-energy / e_ref - lambda_lat [latency missed] - lambda_acc [quality missed]`.
pub fn reward(record: &SlotRecord, cfg: &SystemConfig) -> f64 {
    let mut r = -record.energy / cfg.e_ref;
    if !record.latency_ok {
        r -= cfg.lambda_lat;
    }
    if !record.quality_ok {
        r -= cfg.lambda_acc;
    }
    r
}

pub fn summarize(records: &[SlotRecord]) -> EpisodeMetrics {
    let tasks = records.len();
    let total_energy = records.iter().map(|r| r.energy).sum();
    let rate = |n: usize| if tasks == 0 { 0.0 } else { n as f64 / tasks as f64 };
    EpisodeMetrics {
        total_energy,
        acc_sat_rate: rate(records.iter().filter(|r| r.quality_ok).count()),
        lat_sat_rate: rate(records.iter().filter(|r| r.latency_ok).count()),
        tasks,
        failed: records.iter().filter(|r| r.failed).count(),
        empty: tasks == 0,
    }
}

struct LegOutcome {
    time: f64,
    energy: f64,
    verified: bool,
    retransmissions: u32,
}

pub struct Environment {
    cfg: SystemConfig,
    devices: Vec<DeviceProfile>,
    channel: Channel<f64>,
    costs: CostModel<f64>,
    quality: QualityModel<f64>,
    device_exec: Executor<f64>,
    bs_exec: Executor<f64>,
    gains: Vec<f64>,
    arrivals: RngStream,
    gating: RngStream,
    fading: RngStream,
    slot: usize,
    queue: VecDeque<TaskRequest>,
    next_id: u64,
    busy_until: Vec<f64>,
    served: Vec<bool>,
    served_count: usize,
    done: bool,
}

impl Environment {
    /// Builds an environment from a validated config and resets it.
    pub fn new(cfg: SystemConfig, seed: u64) -> Self {
        let devices = build_devices(&cfg);
        let channel = Channel::from_config(&cfg);
        let gains = devices
            .iter()
            .map(|d| channel.path_gain(d.distance_to(cfg.bs_position)))
            .collect();
        let n = devices.len();
        let mut env = Self {
            costs: CostModel::from_config(&cfg),
            quality: QualityModel::from_config(&cfg),
            device_exec: Executor::device(&cfg),
            bs_exec: Executor::base_station(&cfg),
            arrivals: RngStream::new(seed, StreamLabel::Arrivals),
            gating: RngStream::new(seed, StreamLabel::Gating),
            fading: RngStream::new(seed, StreamLabel::Fading),
            slot: 0,
            queue: VecDeque::new(),
            next_id: 0,
            busy_until: vec![0.0; n],
            served: vec![false; n],
            served_count: 0,
            done: false,
            cfg,
            devices,
            channel,
            gains,
        };
        env.reset(seed);
        env
    }

    /// Restarts the episode at slot 0 with fresh streams for `seed`.
    pub fn reset(&mut self, seed: u64) -> Observation {
        self.arrivals = RngStream::new(seed, StreamLabel::Arrivals);
        self.gating = RngStream::new(seed, StreamLabel::Gating);
        self.fading = RngStream::new(seed, StreamLabel::Fading);
        self.slot = 0;
        self.next_id = 0;
        self.queue.clear();
        self.done = false;
        self.clear_slot();
        self.queue
            .extend(sample_slot(&mut self.arrivals, &self.cfg, 0, &mut self.next_id));
        if self.queue.is_empty() {
            self.advance_slot();
        }
        self.observe()
    }

    pub fn config(&self) -> &SystemConfig {
        &self.cfg
    }

    pub fn devices(&self) -> &[DeviceProfile] {
        &self.devices
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn slot(&self) -> usize {
        self.slot
    }

    pub fn current_task(&self) -> Option<&TaskRequest> {
        self.queue.front()
    }

    pub fn observation_width(&self) -> usize {
        Observation::width(self.devices.len())
    }

    /// Observation for the task at the head of the queue; all zeros once the
    /// episode is over.
    pub fn observe(&self) -> Observation {
        let mut v = Vec::with_capacity(self.observation_width());
        let Some(task) = self.queue.front() else {
            return Observation(vec![0.0; self.observation_width()]);
        };
        v.push(task.length as f64 / self.cfg.token_cap as f64);
        v.push(task.complexity);
        let band = task.band();
        for (i, dev) in self.devices.iter().enumerate() {
            let snr = self.channel.snr(self.cfg.p_max, self.gains[i], self.cfg.bw_downlink);
            v.push(snr.ln_1p() / std::f64::consts::LN_2 / 10.0);
            v.push((1.0 - self.busy_until[i] / self.cfg.slot_duration).max(0.0));
            v.push(dev.expert.affinity[band]);
        }
        Observation(v)
    }

    pub fn validate_action(&self, action: &Action) -> Result<(), EnvError> {
        if action.at_bs {
            return Ok(());
        }
        let checks = [
            ("k_index", action.k_index, self.cfg.k_choices.len()),
            ("power_index", action.power_index, self.cfg.power_levels.len()),
            ("depth", action.depth as usize, self.cfg.d_max as usize + 1),
        ];
        for (field, value, limit) in checks {
            if value >= limit {
                return Err(EnvError::InvalidAction { field, value, limit });
            }
        }
        Ok(())
    }

    pub fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::Finished);
        }
        self.validate_action(action)?;
        let task = self.queue.pop_front().expect("live episode has a queued task");
        let weights: Vec<f64> = gating_scores(&task, &self.devices, self.cfg.gating_noise, &mut self.gating);

        let record = if action.at_bs {
            self.run_dense(&task, action)
        } else {
            self.run_moe(&task, action, &weights)
        };
        let reward = reward(&record, &self.cfg);

        if self.queue.is_empty() {
            self.advance_slot();
        }
        Ok(StepResult {
            observation: self.observe(),
            reward,
            record,
            done: self.done,
        })
    }

    fn run_dense(&mut self, task: &TaskRequest, action: &Action) -> SlotRecord {
        let cost = self.costs.forward_cost(task.length, 0, self.cfg.dense_flops_per_token());
        let (latency, energy) = self.bs_exec.execute(&cost);
        // the dense model is every expert at once
        let score = self.quality.score(task.complexity, self.devices.len(), 0);
        SlotRecord {
            slot: self.slot,
            task_id: task.id,
            length: task.length,
            complexity: task.complexity,
            action: *action,
            k: self.devices.len(),
            power: 0.0,
            experts: Vec::new(),
            energy,
            latency,
            quality: score,
            retransmissions: 0,
            latency_ok: latency <= task.deadline,
            quality_ok: self.quality.verdict(score).satisfied,
            failed: false,
        }
    }

    fn run_moe(&mut self, task: &TaskRequest, action: &Action, weights: &[f64]) -> SlotRecord {
        let k = self.cfg.k_choices[action.k_index];
        let power = self.cfg.power_levels[action.power_index] * self.cfg.p_max;
        let assignment = top_k_route(weights, k, task).expect("k_choices validated against n_devices");

        for (&dev, &tokens) in assignment.experts.iter().zip(&assignment.token_split) {
            if tokens > 0 && !self.served[dev] {
                self.served[dev] = true;
                self.served_count += 1;
            }
        }
        let dl_band = self.cfg.bw_downlink / self.served_count.max(1) as f64;

        let mut energy = 0.0;
        let mut retransmissions = 0;
        let mut partials = Vec::with_capacity(k);
        for (&dev, &tokens) in assignment.experts.iter().zip(&assignment.token_split) {
            if tokens == 0 {
                partials.push(Partial {
                    expert: dev,
                    tokens,
                    cot_steps: action.depth,
                    verified: true,
                    path_time: 0.0,
                });
                continue;
            }
            let down = self.send(task.id, dev, self.costs.input_bits(tokens), power, dl_band);
            energy += down.energy;
            retransmissions += down.retransmissions;
            if !down.verified {
                partials.push(Partial {
                    expert: dev,
                    tokens,
                    cot_steps: action.depth,
                    verified: false,
                    path_time: down.time,
                });
                continue;
            }

            let cost = self
                .costs
                .forward_cost(tokens, action.depth, self.devices[dev].expert.flops_per_token);
            let (compute_time, compute_energy) = self.device_exec.execute(&cost);
            energy += compute_energy;
            let start = down.time.max(self.busy_until[dev]);
            let computed = start + compute_time;

            let up = self.send(task.id, dev, cost.output_bits, power, self.cfg.bw_uplink);
            energy += up.energy;
            retransmissions += up.retransmissions;
            let finished = computed + up.time;
            self.busy_until[dev] = finished;
            partials.push(Partial {
                expert: dev,
                tokens,
                cot_steps: action.depth,
                verified: up.verified,
                path_time: finished,
            });
        }

        let result = aggregate(&partials, &assignment);
        let score = self.quality.score(task.complexity, k, action.depth);
        SlotRecord {
            slot: self.slot,
            task_id: task.id,
            length: task.length,
            complexity: task.complexity,
            action: *action,
            k,
            power,
            experts: assignment.experts,
            energy,
            latency: result.latency,
            quality: score,
            retransmissions,
            latency_ok: !result.failed && result.latency <= task.deadline,
            quality_ok: !result.failed && self.quality.verdict(score).satisfied,
            failed: result.failed,
        }
    }

    /// One payload over one link with CRC framing and at most one
    /// retransmission.
    fn send(&mut self, task_id: u64, dev: usize, bits: f64, power: f64, bandwidth: f64) -> LegOutcome {
        let mut out = LegOutcome {
            time: 0.0,
            energy: 0.0,
            verified: false,
            retransmissions: 0,
        };
        if bits <= 0.0 {
            out.verified = true;
            return out;
        }
        for attempt in 0..2u32 {
            let fade = self.cfg.fading.then(|| self.fading.exponential());
            let gain = self.gains[dev] * fade.unwrap_or(1.0);
            let Ok(budget) = self.channel.budget(bits, power, gain, bandwidth) else {
                return out;
            };
            out.time += budget.tx_time;
            out.energy += budget.tx_energy;
            out.retransmissions = attempt;
            let corrupted = packet_error(budget.snr, bits, &mut self.fading);
            if frame_survives(task_id, dev, attempt, corrupted, &mut self.fading) {
                out.verified = true;
                return out;
            }
        }
        out
    }

    fn clear_slot(&mut self) {
        self.busy_until.iter_mut().for_each(|b| *b = 0.0);
        self.served.iter_mut().for_each(|s| *s = false);
        self.served_count = 0;
    }

    fn advance_slot(&mut self) {
        while self.queue.is_empty() {
            self.slot += 1;
            if self.slot >= self.cfg.n_slots {
                self.done = true;
                return;
            }
            self.clear_slot();
            let arrivals = sample_slot(&mut self.arrivals, &self.cfg, self.slot, &mut self.next_id);
            self.queue.extend(arrivals);
        }
    }
}

/// Frames a branch descriptor, corrupts one bit if the channel says so, and
/// checks the receiver-side CRC.
fn frame_survives(task_id: u64, dev: usize, attempt: u32, corrupted: bool, rng: &mut RngStream) -> bool {
    let mut frame = [0u8; 16];
    frame[..8].copy_from_slice(&task_id.to_le_bytes());
    frame[8..12].copy_from_slice(&(dev as u32).to_le_bytes());
    frame[12..].copy_from_slice(&attempt.to_le_bytes());
    let sent = crc32(&frame);
    if corrupted {
        let bit = rng.below(frame.len() * 8);
        frame[bit / 8] ^= 1 << (bit % 8);
    }
    crc32(&frame) == sent
}

/// Runs `policy` from a fresh reset to the end of the episode.
pub fn run_episode<F>(env: &mut Environment, seed: u64, mut policy: F) -> Vec<SlotRecord>
where
    F: FnMut(&Observation) -> Action,
{
    let mut obs = env.reset(seed);
    let mut records = Vec::new();
    while !env.is_done() {
        let action = policy(&obs);
        let step = env.step(&action).expect("policy produced a valid action");
        records.push(step.record);
        obs = step.observation;
    }
    records
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::validate_config;
    use approx::assert_relative_eq;

    fn env_with(cfg: SystemConfig) -> Environment {
        Environment::new(validate_config(cfg).unwrap(), 1)
    }

    fn short() -> SystemConfig {
        SystemConfig { n_slots: 50, ..Default::default() }
    }

    fn record(energy: f64, latency_ok: bool, quality_ok: bool) -> SlotRecord {
        SlotRecord {
            slot: 0,
            task_id: 0,
            length: 1,
            complexity: 0.0,
            action: Action::dense(),
            k: 1,
            power: 0.0,
            experts: vec![],
            energy,
            latency: 0.0,
            quality: 0.0,
            retransmissions: 0,
            latency_ok,
            quality_ok,
            failed: false,
        }
    }

    #[test]
    fn summarize_folds() {
        let recs: Vec<_> = (0..10).map(|i| record(1.0, i != 0, true)).collect();
        assert_relative_eq!(summarize(&recs).lat_sat_rate, 0.9);
        let recs = [record(1.0, true, true), record(2.0, true, false), record(3.0, false, true)];
        let m = summarize(&recs);
        assert_eq!(m.total_energy, 6.0);
        assert_relative_eq!(m.acc_sat_rate, 2.0 / 3.0);
        let m = summarize(&[]);
        assert!(m.empty);
        assert_eq!((m.tasks, m.lat_sat_rate, m.acc_sat_rate), (0, 0.0, 0.0));
    }

    #[test]
    fn reward_penalties() {
        let cfg = SystemConfig::default();
        assert_eq!(reward(&record(5.0, true, true), &cfg), -0.5);
        assert_eq!(reward(&record(5.0, false, false), &cfg), -2.5);
    }

    #[test]
    fn resets_are_reproducible_and_isolated() {
        let mut env = env_with(short());
        let first = env.reset(9);
        let a = run_episode(&mut env, 9, |_| Action::moe(1, 3, 0));
        assert_eq!(env.reset(9), first);
        let b = run_episode(&mut env, 9, |_| Action::moe(1, 3, 0));
        assert_eq!(a, b);
        let c = run_episode(&mut env, 10, |_| Action::moe(1, 3, 0));
        assert_ne!(a, c);
    }

    #[test]
    fn observation_width_and_range() {
        let mut env = env_with(short());
        let obs = env.reset(3);
        assert_eq!(obs.0.len(), 47);
        assert!(obs.0.iter().all(|x| x.is_finite()));
        assert!(obs.length() > 0.0 && obs.length() <= 1.0);
    }

    #[test]
    fn invalid_actions_are_contract_errors() {
        let mut env = env_with(short());
        env.reset(3);
        let err = env.step(&Action::moe(3, 0, 0)).unwrap_err();
        assert!(matches!(err, EnvError::InvalidAction { field: "k_index", .. }));
        assert!(env.step(&Action::moe(0, 4, 0)).is_err());
        assert!(env.step(&Action::moe(0, 0, 6)).is_err());
        assert!(env.step(&Action::moe(0, 0, 5)).is_ok());
    }

    #[test]
    fn dense_full_length_task_energy() {
        let mut env = env_with(SystemConfig { mean_len: 5000.0, ..short() });
        env.reset(1);
        assert_eq!(env.current_task().unwrap().length, 1024);
        let s = env.step(&Action::dense()).unwrap();
        assert_relative_eq!(s.record.energy, 153.6, max_relative = 1e-12);
        assert!(s.record.latency_ok && s.record.quality_ok);
        assert_relative_eq!(s.reward, -15.36, max_relative = 1e-12);
    }

    #[test]
    fn easy_task_near_device_meets_both_constraints() {
        // one device next to the BS, every task trivially easy
        let cfg = SystemConfig {
            n_devices: 1,
            device_positions: vec![[500.0, 510.0]],
            q_span: 0.0,
            k_choices: vec![1],
            ..short()
        };
        let cfg = validate_config(cfg).unwrap();
        let mut env = Environment::new(cfg.clone(), 4);
        let task = env.current_task().unwrap().clone();
        let s = env.step(&Action::moe(0, 3, 0)).unwrap();
        assert!(s.record.latency_ok && s.record.quality_ok && !s.record.failed);
        assert_eq!(s.reward, -s.record.energy / cfg.e_ref);

        // standalone per-task calculator
        let ch = Channel::<f64>::from_config(&cfg);
        let gain = ch.path_gain(10.0);
        let bits = task.length as f64 * cfg.bits_per_token;
        let dl = ch.budget(bits, 0.01, gain, cfg.bw_downlink).unwrap();
        let flops = task.length as f64 * 1e9;
        let ul = ch.budget(bits, 0.01, gain, cfg.bw_uplink).unwrap();
        let expected = dl.tx_energy + flops * cfg.kappa_device + ul.tx_energy;
        assert_relative_eq!(s.record.energy, expected, max_relative = 1e-12);
        assert_relative_eq!(
            s.record.latency,
            dl.tx_time + flops / cfg.device_tflops + ul.tx_time,
            max_relative = 1e-12
        );
    }

    #[test]
    fn zero_token_branch_costs_nothing() {
        // lengths are 1 so a k=2 route leaves one expert without tokens
        let cfg = SystemConfig { mean_len: 1e-9, token_cap: 1, ..short() };
        let mut env = env_with(cfg);
        let s = env.step(&Action::moe(1, 3, 0)).unwrap();
        assert_eq!(s.record.experts.len(), 2);
        let one = {
            let mut env = env_with(SystemConfig { mean_len: 1e-9, token_cap: 1, ..short() });
            env.step(&Action::moe(0, 3, 0)).unwrap().record
        };
        assert_relative_eq!(s.record.energy, one.energy, max_relative = 1e-12);
    }

    #[test]
    fn far_device_at_low_power_fails_twice() {
        let cfg = SystemConfig {
            n_devices: 1,
            device_positions: vec![[0.0, 0.0]],
            k_choices: vec![1],
            ..short()
        };
        let mut env = env_with(cfg);
        let s = env.step(&Action::moe(0, 0, 0)).unwrap();
        assert!(s.record.failed);
        assert!(!s.record.latency_ok && !s.record.quality_ok);
        assert_eq!(s.record.retransmissions, 1);
        assert_eq!(s.reward, -s.record.energy / 10.0 - 2.0);
    }

    #[test]
    fn finished_episode_rejects_steps() {
        let mut env = env_with(SystemConfig { n_slots: 2, ..Default::default() });
        let recs = run_episode(&mut env, 5, |_| Action::dense());
        assert!(env.is_done());
        assert!(recs.iter().all(|r| r.slot < 2));
        assert_eq!(env.step(&Action::dense()).unwrap_err(), EnvError::Finished);
        assert!(env.observe().0.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn crc_frames_detect_corruption() {
        let mut rng = RngStream::new(0, StreamLabel::Fading);
        for i in 0..1000 {
            assert!(frame_survives(i, 3, 0, false, &mut rng));
            assert!(!frame_survives(i, 3, 1, true, &mut rng));
        }
    }
}
