//! Tasks, devices and hosted experts.

use serde::{Deserialize, Serialize};

use crate::config::{SystemConfig, COMPLEXITY_BANDS};
use crate::rng::RngStream;

/// One inference request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRequest {
    pub id: u64,
    /// Tokens, in `1..=token_cap`.
    pub length: u32,
    /// In `[0, 1]`.
    pub complexity: f64,
    pub arrival_slot: usize,
    /// Seconds.
    pub deadline: f64,
}

impl TaskRequest {
    /// Complexity band used to look up expert affinity.
    pub fn band(&self) -> usize {
        complexity_band(self.complexity)
    }
}

pub fn complexity_band(complexity: f64) -> usize {
    ((complexity * COMPLEXITY_BANDS as f64) as usize).min(COMPLEXITY_BANDS - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertProfile {
    pub flops_per_token: f64,
    /// Bytes.
    pub mem_footprint: f64,
    /// Gating-logit bias per complexity band.
    pub affinity: [f64; COMPLEXITY_BANDS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub id: usize,
    pub position: [f64; 2],
    /// FLOPs per second.
    pub tflops: f64,
    pub mem: f64,
    pub expert: ExpertProfile,
}

impl DeviceProfile {
    pub fn distance_to(&self, point: [f64; 2]) -> f64 {
        let dx = self.position[0] - point[0];
        let dy = self.position[1] - point[1];
        dx.hypot(dy)
    }
}

/// Builds the device roster. Device `i` specializes in band `i mod 4`.
pub fn build_devices(cfg: &SystemConfig) -> Vec<DeviceProfile> {
    cfg.positions()
        .into_iter()
        .enumerate()
        .map(|(id, position)| {
            let mut affinity = [0.0; COMPLEXITY_BANDS];
            affinity[id % COMPLEXITY_BANDS] = cfg.affinity_strength;
            DeviceProfile {
                id,
                position,
                tflops: cfg.device_tflops,
                mem: cfg.device_mem,
                expert: ExpertProfile {
                    flops_per_token: cfg.flops_per_token_expert,
                    mem_footprint: cfg.expert_mem,
                    affinity,
                },
            }
        })
        .collect()
}

/// Maps a raw Poisson draw to a valid length in `1..=cap`.
pub fn clamp_length(draw: u64, cap: u32) -> u32 {
    draw.clamp(1, cap as u64) as u32
}

/// Draws one task from the arrivals stream.
pub fn sample_task(rng: &mut RngStream, cfg: &SystemConfig, slot: usize, id: u64) -> TaskRequest {
    let length = clamp_length(rng.poisson(cfg.mean_len), cfg.token_cap);
    let complexity = rng.uniform();
    TaskRequest {
        id,
        length,
        complexity,
        arrival_slot: slot,
        deadline: cfg.deadline,
    }
}

/// Draws the arrivals of one slot. Ids continue from `next_id`.
pub fn sample_slot(rng: &mut RngStream, cfg: &SystemConfig, slot: usize, next_id: &mut u64) -> Vec<TaskRequest> {
    let count = rng.poisson(cfg.tasks_per_slot_mean);
    (0..count)
        .map(|_| {
            let task = sample_task(rng, cfg, slot, *next_id);
            *next_id += 1;
            task
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::validate_config;
    use crate::rng::StreamLabel;

    #[test]
    fn length_clamps() {
        assert_eq!(clamp_length(2000, 1024), 1024);
        assert_eq!(clamp_length(0, 1024), 1);
        assert_eq!(clamp_length(512, 1024), 512);
    }

    #[test]
    fn bands_partition_unit_interval() {
        assert_eq!(complexity_band(0.0), 0);
        assert_eq!(complexity_band(0.2499), 0);
        assert_eq!(complexity_band(0.25), 1);
        assert_eq!(complexity_band(0.99), 3);
        assert_eq!(complexity_band(1.0), 3);
    }

    #[test]
    fn tasks_carry_config_deadline() {
        let cfg = validate_config(SystemConfig::default()).unwrap();
        let mut rng = RngStream::new(1, StreamLabel::Arrivals);
        let t = sample_task(&mut rng, &cfg, 3, 9);
        assert_eq!((t.id, t.arrival_slot, t.deadline), (9, 3, 1.0));
        assert!((0.0..=1.0).contains(&t.complexity));
    }

    #[test]
    fn small_cap_clamps_every_draw() {
        let cfg = validate_config(SystemConfig { token_cap: 8, ..Default::default() }).unwrap();
        let mut rng = RngStream::new(1, StreamLabel::Arrivals);
        for _ in 0..200 {
            assert_eq!(sample_task(&mut rng, &cfg, 0, 0).length, 8);
        }
    }

    #[test]
    fn a_million_draws_stay_in_range() {
        let cfg = SystemConfig::default();
        let mut rng = RngStream::new(3, StreamLabel::Arrivals);
        for _ in 0..1_000_000 {
            let l = clamp_length(rng.poisson(cfg.mean_len), cfg.token_cap);
            assert!((1..=cfg.token_cap).contains(&l));
        }
    }

    #[test]
    fn default_config_builds_devices_without_validation() {
        assert_eq!(build_devices(&SystemConfig::default()).len(), 15);
    }

    #[test]
    fn devices_specialize_round_robin() {
        let cfg = validate_config(SystemConfig::default()).unwrap();
        let devs = build_devices(&cfg);
        assert_eq!(devs.len(), 15);
        assert_eq!(devs[5].expert.affinity, [0.0, 1.0, 0.0, 0.0]);
    }
}
