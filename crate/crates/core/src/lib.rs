//! Simulator and optimization testbed for distributed mixture-of-experts
//! inference over a mobile-edge wireless network.
//!
//! A base station gates each request to the top-k edge experts, ships token
//! batches over a power-controlled downlink, and collects results over the
//! uplink; experts can spend extra forward passes on chain-of-thought steps.
//! [`env::Environment`] exposes this as a reset/step process that scripted
//! [`baselines`] and the [`dppo`] trainer drive.

pub mod baselines;
pub mod channel;
pub mod compute;
pub mod config;
pub mod crc;
pub mod dppo;
pub mod env;
pub mod moe;
pub mod quality;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod task;

pub use baselines::SchemeId;
pub use config::{load_config, validate_config, SystemConfig};
pub use crc::crc32;
pub use dppo::TrainConfig;
pub use env::{Action, EpisodeMetrics, Environment, Observation, SlotRecord};
pub use rng::{RngStream, StreamLabel};
pub use scalar::Scalar;
pub use task::{DeviceProfile, ExpertProfile, TaskRequest};

pub type Channel = channel::Channel<f64>;
pub type Channel32 = channel::Channel<f32>;
pub type LinkBudget = channel::LinkBudget<f64>;
pub type LinkBudget32 = channel::LinkBudget<f32>;
pub type CostModel = compute::CostModel<f64>;
pub type CostModel32 = compute::CostModel<f32>;
pub type ForwardCost = compute::ForwardCost<f64>;
pub type QualityModel = quality::QualityModel<f64>;
pub type QualityModel32 = quality::QualityModel<f32>;
pub type QualityVerdict = quality::QualityVerdict<f64>;
pub type GatingAssignment = moe::GatingAssignment<f64>;
pub type PolicyNet = dppo::PolicyNet<f64>;
pub type PolicyNet32 = dppo::PolicyNet<f32>;
