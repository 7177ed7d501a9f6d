//! System configuration: defaults, JSON loading and validation.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::rng::{RngStream, StreamLabel};

/// Environment variable that overrides `seed` when set.
pub const SEED_ENV: &str = "MEGI_SEED";

/// Simulation parameters. Field names are the JSON keys of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub n_devices: usize,
    /// Side of the square coverage area, meters.
    pub area_side: f64,
    pub bs_position: [f64; 2],
    /// Empty means "generate uniformly in the area from `seed`".
    pub device_positions: Vec<[f64; 2]>,
    /// Watts.
    pub p_max: f64,
    /// Hertz.
    pub bw_downlink: f64,
    pub bw_uplink: f64,
    /// Watts per hertz.
    pub noise_psd: f64,
    pub pathloss_exponent: f64,
    /// Power gain at 1 m.
    pub ref_gain: f64,
    /// Unit-mean exponential fading on every link draw.
    pub fading: bool,
    pub slot_duration: f64,
    pub n_slots: usize,
    pub token_cap: u32,
    pub mean_len: f64,
    pub tasks_per_slot_mean: f64,
    pub bits_per_token: f64,
    /// Extra payload per CoT step as a fraction of the base payload.
    pub cot_payload_factor: f64,
    pub flops_per_token_expert: f64,
    /// Defaults to `n_devices * flops_per_token_expert`.
    pub flops_per_token_dense: Option<f64>,
    /// Joules per FLOP.
    pub kappa_device: f64,
    pub kappa_bs: f64,
    /// FLOPs per second.
    pub device_tflops: f64,
    pub bs_tflops: f64,
    /// Bytes.
    pub device_mem: f64,
    pub expert_mem: f64,
    /// Seconds.
    pub deadline: f64,
    pub q_hi: f64,
    pub q_span: f64,
    pub rho_k: f64,
    pub rho_d: f64,
    pub theta: f64,
    /// Joules.
    pub e_ref: f64,
    pub lambda_lat: f64,
    pub lambda_acc: f64,
    pub k_choices: Vec<usize>,
    pub d_max: u32,
    /// Fractions of `p_max`.
    pub power_levels: Vec<f64>,
    /// Standard deviation of the gating-logit noise.
    pub gating_noise: f64,
    /// Gating-logit bias an expert receives on its specialty band.
    pub affinity_strength: f64,
    pub seed: u64,
}

/// Number of complexity bands experts specialize on.
pub const COMPLEXITY_BANDS: usize = 4;

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            n_devices: 15,
            area_side: 1000.0,
            bs_position: [500.0, 500.0],
            device_positions: Vec::new(),
            p_max: 0.01,
            bw_downlink: 20e6,
            bw_uplink: 1e6,
            noise_psd: 3.98e-21,
            pathloss_exponent: 2.5,
            ref_gain: 1e-3,
            fading: false,
            slot_duration: 1.0,
            n_slots: 1000,
            token_cap: 1024,
            mean_len: 512.0,
            tasks_per_slot_mean: 2.0,
            bits_per_token: 4096.0,
            cot_payload_factor: 0.25,
            flops_per_token_expert: 1e9,
            flops_per_token_dense: None,
            kappa_device: 5e-12,
            kappa_bs: 1e-11,
            device_tflops: 2e12,
            bs_tflops: 24.0 * 312e12,
            device_mem: 32e9,
            expert_mem: 4e9,
            deadline: 1.0,
            q_hi: 0.9,
            q_span: 0.3,
            rho_k: 0.9,
            rho_d: 0.75,
            theta: 0.85,
            e_ref: 10.0,
            lambda_lat: 1.0,
            lambda_acc: 1.0,
            k_choices: vec![1, 2, 3],
            d_max: 5,
            power_levels: vec![0.25, 0.5, 0.75, 1.0],
            gating_noise: 0.5,
            affinity_strength: 1.0,
            seed: 42,
        }
    }
}

/// One violated invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("MEGI_SEED is not a valid u64 seed: {0:?}")]
    SeedEnv(String),
    #[error("invalid config:\n{}", .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<ConfigError>),
}

impl SystemConfig {
    pub fn dense_flops_per_token(&self) -> f64 {
        self.flops_per_token_dense
            .unwrap_or(self.n_devices as f64 * self.flops_per_token_expert)
    }

    /// Device positions: the explicit list, or a uniform scatter over the
    /// area drawn from the config seed.
    pub fn positions(&self) -> Vec<[f64; 2]> {
        if !self.device_positions.is_empty() {
            return self.device_positions.clone();
        }
        let side = self.area_side;
        let mut rng = RngStream::indexed(self.seed, StreamLabel::Arrivals, 1);
        (0..self.n_devices)
            .map(|_| [rng.uniform() * side, rng.uniform() * side])
            .collect()
    }

    /// Hash of the canonical JSON form, used to tag outputs.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        hex::encode(&digest[..8])
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Reads, applies `MEGI_SEED` and validates a config file.
pub fn load_config(path: &Path) -> Result<SystemConfig, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut raw = SystemConfig::from_json(&text).map_err(|source| LoadError::Parse {
        path: path.display().to_string(),
        source,
    })?;
    apply_seed_env(&mut raw)?;
    validate_config(raw).map_err(LoadError::Invalid)
}

pub fn apply_seed_env(cfg: &mut SystemConfig) -> Result<(), LoadError> {
    if let Ok(v) = std::env::var(SEED_ENV) {
        cfg.seed = v.trim().parse().map_err(|_| LoadError::SeedEnv(v))?;
    }
    Ok(())
}

/// Checks every invariant and fills derived defaults. All violations are
/// reported at once.
pub fn validate_config(mut raw: SystemConfig) -> Result<SystemConfig, Vec<ConfigError>> {
    let mut errs = Vec::new();
    let mut fail = |field: &'static str, message: String| errs.push(ConfigError { field, message });

    let positive = [
        ("area_side", raw.area_side),
        ("p_max", raw.p_max),
        ("bw_downlink", raw.bw_downlink),
        ("bw_uplink", raw.bw_uplink),
        ("noise_psd", raw.noise_psd),
        ("pathloss_exponent", raw.pathloss_exponent),
        ("ref_gain", raw.ref_gain),
        ("slot_duration", raw.slot_duration),
        ("mean_len", raw.mean_len),
        ("bits_per_token", raw.bits_per_token),
        ("flops_per_token_expert", raw.flops_per_token_expert),
        ("device_tflops", raw.device_tflops),
        ("bs_tflops", raw.bs_tflops),
        ("device_mem", raw.device_mem),
        ("deadline", raw.deadline),
        ("e_ref", raw.e_ref),
    ];
    for (field, v) in positive {
        if !(v.is_finite() && v > 0.0) {
            fail(field, format!("must be finite and > 0, got {v}"));
        }
    }
    let non_negative = [
        ("tasks_per_slot_mean", raw.tasks_per_slot_mean),
        ("cot_payload_factor", raw.cot_payload_factor),
        ("kappa_device", raw.kappa_device),
        ("kappa_bs", raw.kappa_bs),
        ("expert_mem", raw.expert_mem),
        ("lambda_lat", raw.lambda_lat),
        ("lambda_acc", raw.lambda_acc),
        ("gating_noise", raw.gating_noise),
    ];
    for (field, v) in non_negative {
        if !(v.is_finite() && v >= 0.0) {
            fail(field, format!("must be finite and >= 0, got {v}"));
        }
    }
    if !raw.affinity_strength.is_finite() {
        fail("affinity_strength", "must be finite".into());
    }
    for (field, v) in [("q_hi", raw.q_hi), ("q_span", raw.q_span), ("theta", raw.theta)] {
        if !(0.0..=1.0).contains(&v) {
            fail(field, format!("must lie in [0, 1], got {v}"));
        }
    }
    if raw.q_hi - raw.q_span < 0.0 {
        fail("q_span", format!("q_hi - q_span must be >= 0, got {}", raw.q_hi - raw.q_span));
    }
    for (field, v) in [("rho_k", raw.rho_k), ("rho_d", raw.rho_d)] {
        if !(v > 0.0 && v < 1.0) {
            fail(field, format!("must lie in (0, 1), got {v}"));
        }
    }
    if raw.n_devices < 1 {
        fail("n_devices", "must be >= 1".into());
    }
    if raw.n_slots < 1 {
        fail("n_slots", "must be >= 1".into());
    }
    if raw.token_cap < 1 {
        fail("token_cap", "must be >= 1".into());
    }
    if let Some(dense) = raw.flops_per_token_dense {
        if !(dense.is_finite() && dense > 0.0) {
            fail("flops_per_token_dense", format!("must be finite and > 0, got {dense}"));
        }
    }
    if raw.expert_mem > raw.device_mem {
        fail(
            "expert_mem",
            format!(
                "expert footprint {} B exceeds device memory {} B (hardware capacity)",
                raw.expert_mem, raw.device_mem
            ),
        );
    }
    if raw.k_choices.is_empty() {
        fail("k_choices", "must not be empty".into());
    }
    for &k in &raw.k_choices {
        if k < 1 || k > raw.n_devices {
            fail("k_choices", format!("{k} not in 1..={}", raw.n_devices));
        }
    }
    if raw.power_levels.is_empty() {
        fail("power_levels", "must not be empty".into());
    }
    for &p in &raw.power_levels {
        if !(p > 0.0 && p <= 1.0) {
            fail("power_levels", format!("fraction {p} not in (0, 1]"));
        }
    }
    let side = raw.area_side;
    let inside = |p: &[f64; 2]| p.iter().all(|c| c.is_finite() && (0.0..=side).contains(c));
    if !inside(&raw.bs_position) {
        fail("bs_position", format!("{:?} outside the {side} m area", raw.bs_position));
    }
    if raw.device_positions.is_empty() {
        if side.is_finite() && side > 0.0 {
            raw.device_positions = raw.positions();
        }
    } else {
        if raw.device_positions.len() != raw.n_devices {
            fail(
                "device_positions",
                format!("{} positions for {} devices", raw.device_positions.len(), raw.n_devices),
            );
        }
        for p in &raw.device_positions {
            if !inside(p) {
                fail("device_positions", format!("{p:?} outside the {side} m area"));
            }
        }
    }

    if errs.is_empty() {
        Ok(raw)
    } else {
        Err(errs)
    }
}
