//! Scripted comparison schemes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::env::{Action, Observation};

/// The four evaluated schemes, by their CLI names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeId {
    DenseNocot,
    MoeNocot,
    MoeFixedCot,
    MoeDynamic,
}

impl SchemeId {
    pub const ALL: [SchemeId; 4] = [
        SchemeId::DenseNocot,
        SchemeId::MoeNocot,
        SchemeId::MoeFixedCot,
        SchemeId::MoeDynamic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeId::DenseNocot => "dense_nocot",
            SchemeId::MoeNocot => "moe_nocot",
            SchemeId::MoeFixedCot => "moe_fixed_cot",
            SchemeId::MoeDynamic => "moe_dynamic",
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown scheme {0:?}; expected one of dense_nocot, moe_nocot, moe_fixed_cot, moe_dynamic")]
pub struct UnknownScheme(pub String);

impl FromStr for SchemeId {
    type Err = UnknownScheme;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SchemeId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| UnknownScheme(s.to_string()))
    }
}

/// Default depth of the fixed-CoT scheme: enough for the hardest task with
/// a single expert.
pub const DEFAULT_D_FIXED: u32 = 4;

/// Experts used by both scripted MoE schemes.
pub const BASELINE_K: usize = 2;

/// Dense model at the BS, no CoT.
pub fn dense_policy(_obs: &Observation) -> Action {
    Action::dense()
}

/// Menu positions shared by the MoE baselines: k = 2 and the top power
/// level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BaselineMenu {
    pub k_index: usize,
    pub power_index: usize,
}

impl BaselineMenu {
    /// Falls back to the largest available k when 2 is not on the menu.
    pub fn from_config(cfg: &SystemConfig) -> Self {
        let k_index = cfg
            .k_choices
            .iter()
            .position(|&k| k == BASELINE_K)
            .unwrap_or_else(|| argmax_by(&cfg.k_choices, |&k| k as f64));
        let power_index = argmax_by(&cfg.power_levels, |&p| p);
        Self { k_index, power_index }
    }
}

fn argmax_by<T>(items: &[T], key: impl Fn(&T) -> f64) -> usize {
    (0..items.len())
        .fold(0, |best, i| if key(&items[i]) > key(&items[best]) { i } else { best })
}

pub fn moe_nocot_policy(_obs: &Observation, menu: BaselineMenu) -> Action {
    Action::moe(menu.k_index, menu.power_index, 0)
}

pub fn fixed_cot_policy(_obs: &Observation, menu: BaselineMenu, d_fixed: u32) -> Action {
    Action::moe(menu.k_index, menu.power_index, d_fixed)
}
