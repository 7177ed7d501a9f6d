//! Batch experiment plumbing behind the CLI: running schemes, CSV/JSON
//! output and cross-seed summaries.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{dense_policy, fixed_cot_policy, moe_nocot_policy, BaselineMenu, SchemeId};
use crate::config::SystemConfig;
use crate::dppo::trainer::head_widths;
use crate::dppo::{load_checkpoint, CheckpointError, DynamicPolicy, TrainLogRow};
use crate::env::{run_episode, summarize, EpisodeMetrics, Environment, Observation, SlotRecord};

pub const ARTIFACT_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("scheme moe_dynamic needs --checkpoint")]
    MissingCheckpoint,
    #[error("d_fixed = {d_fixed} exceeds d_max = {d_max}")]
    DepthOutOfRange { d_fixed: u32, d_max: u32 },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("writing {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("run {manifest} failed: {source}")]
    Failed {
        manifest: String,
        source: Box<RunError>,
    },
}

impl RunError {
    /// Usage mistakes exit with 2, everything else with 1.
    pub fn is_usage(&self) -> bool {
        match self {
            RunError::MissingCheckpoint | RunError::DepthOutOfRange { .. } => true,
            // a checkpoint that does not fit the config is a config mistake
            RunError::Checkpoint(CheckpointError::Shape { .. }) => true,
            RunError::Failed { source, .. } => source.is_usage(),
            _ => false,
        }
    }
}

/// Provenance of one (scheme, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scheme: SchemeId,
    pub seed: u64,
    pub config_path: Option<PathBuf>,
    pub config_hash: String,
    pub records_path: Option<PathBuf>,
    pub metrics_path: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

/// Metrics file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub scheme: SchemeId,
    pub seed: u64,
    pub total_energy_j: f64,
    pub acc_sat_rate: f64,
    pub lat_sat_rate: f64,
    pub tasks: usize,
    pub failed: usize,
    pub config_hash: String,
}

impl RunMetrics {
    pub fn new(scheme: SchemeId, seed: u64, m: &EpisodeMetrics, config_hash: &str) -> Self {
        Self {
            scheme,
            seed,
            total_energy_j: m.total_energy,
            acc_sat_rate: m.acc_sat_rate,
            lat_sat_rate: m.lat_sat_rate,
            tasks: m.tasks,
            failed: m.failed,
            config_hash: config_hash.to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<SlotRecord>,
    pub metrics: RunMetrics,
}

/// How a scheme is driven.
#[derive(Debug, Clone)]
pub enum SchemePolicy {
    Dense,
    MoeNocot(BaselineMenu),
    FixedCot(BaselineMenu, u32),
    Dynamic(DynamicPolicy),
}

impl SchemePolicy {
    pub fn act(&self, obs: &Observation) -> crate::env::Action {
        match self {
            SchemePolicy::Dense => dense_policy(obs),
            SchemePolicy::MoeNocot(menu) => moe_nocot_policy(obs, *menu),
            SchemePolicy::FixedCot(menu, d) => fixed_cot_policy(obs, *menu, *d),
            SchemePolicy::Dynamic(p) => p.act(obs),
        }
    }

    /// Builds the policy for `scheme`; the dynamic scheme needs a trained
    /// network.
    pub fn for_scheme(
        cfg: &SystemConfig,
        scheme: SchemeId,
        d_fixed: u32,
        dynamic: Option<&DynamicPolicy>,
    ) -> Result<Self, RunError> {
        let menu = BaselineMenu::from_config(cfg);
        Ok(match scheme {
            SchemeId::DenseNocot => SchemePolicy::Dense,
            SchemeId::MoeNocot => SchemePolicy::MoeNocot(menu),
            SchemeId::MoeFixedCot => {
                if d_fixed > cfg.d_max {
                    return Err(RunError::DepthOutOfRange { d_fixed, d_max: cfg.d_max });
                }
                SchemePolicy::FixedCot(menu, d_fixed)
            }
            SchemeId::MoeDynamic => SchemePolicy::Dynamic(dynamic.ok_or(RunError::MissingCheckpoint)?.clone()),
        })
    }
}

/// Loads a dynamic-scheme checkpoint and checks it against `cfg`.
pub fn load_dynamic(cfg: &SystemConfig, path: &Path) -> Result<DynamicPolicy, RunError> {
    let ck = load_checkpoint::<f64>(path)?;
    ck.check_shape(Observation::width(cfg.n_devices), head_widths(cfg))?;
    Ok(DynamicPolicy { net: ck.net })
}

/// One full episode of `scheme` on `seed`.
pub fn run_scheme(
    cfg: &SystemConfig,
    scheme: SchemeId,
    seed: u64,
    d_fixed: u32,
    dynamic: Option<&DynamicPolicy>,
) -> Result<RunOutput, RunError> {
    let policy = SchemePolicy::for_scheme(cfg, scheme, d_fixed, dynamic)?;
    let mut env = Environment::new(cfg.clone(), seed);
    let records = run_episode(&mut env, seed, |obs| policy.act(obs));
    let metrics = RunMetrics::new(scheme, seed, &summarize(&records), &cfg.hash());
    Ok(RunOutput { records, metrics })
}

fn provenance(config_hash: &str, seed: Option<u64>, extra: &str) -> String {
    let mut line = format!("# {ARTIFACT_VERSION} config_hash={config_hash}");
    if let Some(seed) = seed {
        let _ = write!(line, " seed={seed}");
    }
    if !extra.is_empty() {
        let _ = write!(line, " {extra}");
    }
    line.push('\n');
    line
}

fn flag(b: bool) -> u8 {
    b as u8
}

pub const RECORD_HEADER: &str = "slot,task_id,length,complexity,at_bs,k,power_w,depth,experts,energy_j,latency_s,quality,retransmissions,latency_ok,quality_ok,failed";

/// Per-task CSV with its provenance comment line.
pub fn records_csv(records: &[SlotRecord], metrics: &RunMetrics) -> String {
    let mut out = provenance(&metrics.config_hash, Some(metrics.seed), &format!("scheme={}", metrics.scheme));
    out.push_str(RECORD_HEADER);
    out.push('\n');
    for r in records {
        let experts = r.experts.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(";");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.slot,
            r.task_id,
            r.length,
            r.complexity,
            flag(r.action.at_bs),
            r.k,
            r.power,
            if r.action.at_bs { 0 } else { r.action.depth },
            experts,
            r.energy,
            r.latency,
            r.quality,
            r.retransmissions,
            flag(r.latency_ok),
            flag(r.quality_ok),
            flag(r.failed),
        );
    }
    out
}

/// Writes via a sibling temp file and rename so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `<dir>/<scheme>_seed<seed>.csv` and `.json`; returns both paths.
pub fn write_run(dir: &Path, output: &RunOutput) -> Result<(PathBuf, PathBuf), RunError> {
    let stem = format!("{}_seed{}", output.metrics.scheme, output.metrics.seed);
    let csv = dir.join(format!("{stem}.csv"));
    let json = dir.join(format!("{stem}.json"));
    write_atomic(&csv, records_csv(&output.records, &output.metrics).as_bytes()).map_err(io_err(&csv))?;
    let mut text = serde_json::to_string_pretty(&output.metrics).expect("metrics serialize");
    text.push('\n');
    write_atomic(&json, text.as_bytes()).map_err(io_err(&json))?;
    Ok((csv, json))
}

/// One row of the comparison table. `seed` is a number, `mean` or `sd`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scheme: SchemeId,
    pub seed: String,
    pub total_energy_j: f64,
    pub acc_sat_rate: f64,
    pub lat_sat_rate: f64,
    pub tasks: f64,
    pub failed: f64,
}

impl SummaryRow {
    fn from_metrics(m: &RunMetrics) -> Self {
        Self {
            scheme: m.scheme,
            seed: m.seed.to_string(),
            total_energy_j: m.total_energy_j,
            acc_sat_rate: m.acc_sat_rate,
            lat_sat_rate: m.lat_sat_rate,
            tasks: m.tasks as f64,
            failed: m.failed as f64,
        }
    }

    fn values(&self) -> [f64; 5] {
        [self.total_energy_j, self.acc_sat_rate, self.lat_sat_rate, self.tasks, self.failed]
    }
}

/// Runs every (scheme, seed) pair concurrently. Returns the per-run rows
/// followed by one mean row and one sample-sd row per scheme.
pub fn compare(
    cfg: &SystemConfig,
    schemes: &[SchemeId],
    seeds: &[u64],
    d_fixed: u32,
    dynamic: Option<&DynamicPolicy>,
    out_dir: Option<&Path>,
) -> Result<Vec<SummaryRow>, RunError> {
    let jobs: Vec<(SchemeId, u64)> = schemes
        .iter()
        .flat_map(|&s| seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let results: Vec<Result<RunMetrics, RunError>> = jobs
        .par_iter()
        .map(|&(scheme, seed)| {
            let wrap = |e: RunError| RunError::Failed {
                manifest: format!("scheme={scheme} seed={seed} config_hash={}", cfg.hash()),
                source: Box::new(e),
            };
            let out = run_scheme(cfg, scheme, seed, d_fixed, dynamic).map_err(wrap)?;
            if let Some(dir) = out_dir {
                write_run(dir, &out).map_err(wrap)?;
            }
            Ok(out.metrics)
        })
        .collect();
    let metrics = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut rows: Vec<SummaryRow> = metrics.iter().map(SummaryRow::from_metrics).collect();
    for &scheme in schemes {
        let members: Vec<[f64; 5]> = rows
            .iter()
            .filter(|r| r.scheme == scheme)
            .map(SummaryRow::values)
            .collect();
        let n = members.len() as f64;
        let mean: [f64; 5] = std::array::from_fn(|i| members.iter().map(|m| m[i]).sum::<f64>() / n);
        let sd: [f64; 5] = std::array::from_fn(|i| {
            if members.len() < 2 {
                0.0
            } else {
                (members.iter().map(|m| (m[i] - mean[i]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            }
        });
        for (label, v) in [("mean", mean), ("sd", sd)] {
            rows.push(SummaryRow {
                scheme,
                seed: label.to_string(),
                total_energy_j: v[0],
                acc_sat_rate: v[1],
                lat_sat_rate: v[2],
                tasks: v[3],
                failed: v[4],
            });
        }
    }
    Ok(rows)
}

pub const SUMMARY_HEADER: &str = "scheme,seed,total_energy_j,acc_sat_rate,lat_sat_rate,tasks,failed";

pub fn summary_csv(rows: &[SummaryRow], config_hash: &str, seeds: &[u64]) -> String {
    let seeds = seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(";");
    let mut out = provenance(config_hash, None, &format!("seeds={seeds}"));
    out.push_str(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.scheme, r.seed, r.total_energy_j, r.acc_sat_rate, r.lat_sat_rate, r.tasks, r.failed
        );
    }
    out
}

/// Fixed-width table of the mean rows, for the terminal.
pub fn summary_table(rows: &[SummaryRow]) -> String {
    let mut out = format!(
        "{:<14} {:>16} {:>10} {:>10}\n",
        "scheme", "energy_J(mean)", "acc_sat", "lat_sat"
    );
    for r in rows.iter().filter(|r| r.seed == "mean") {
        let _ = writeln!(
            out,
            "{:<14} {:>16.2} {:>10.4} {:>10.4}",
            r.scheme.name(),
            r.total_energy_j,
            r.acc_sat_rate,
            r.lat_sat_rate
        );
    }
    out
}

pub const TRAIN_LOG_HEADER: &str = "iteration,mean_reward,policy_loss,value_loss,entropy,lat_sat,acc_sat,energy_mean";

pub fn train_log_csv(rows: &[TrainLogRow], config_hash: &str, seed: u64) -> String {
    let mut out = provenance(config_hash, Some(seed), "log=train");
    out.push_str(TRAIN_LOG_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.iteration, r.mean_reward, r.policy_loss, r.value_loss, r.entropy, r.lat_sat, r.acc_sat, r.energy_mean
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("bad seed list {0:?}: expected N, A..B (inclusive) or a comma list")]
pub struct SeedListError(pub String);

/// Parses `A..B` (inclusive), `N` or `a,b,c`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, SeedListError> {
    let err = || SeedListError(text.to_string());
    let text = text.trim();
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| err())?;
        let b: u64 = b.trim().parse().map_err(|_| err())?;
        if a > b {
            return Err(err());
        }
        return Ok((a..=b).collect());
    }
    let seeds = text
        .split(',')
        .map(|s| s.trim().parse::<u64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| err())?;
    if seeds.is_empty() {
        Err(err())
    } else {
        Ok(seeds)
    }
}
