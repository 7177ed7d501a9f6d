use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use megi::baselines::DEFAULT_D_FIXED;
use megi::config::{apply_seed_env, load_config, validate_config, LoadError};
use megi::dppo::{train, TrainConfig};
use megi::report::{
    compare, load_dynamic, parse_seeds, run_scheme, summary_csv, summary_table, train_log_csv, write_atomic,
    write_run, RunError,
};
use megi::{SchemeId, SystemConfig};

#[derive(Parser)]
#[command(name = "megi", version, about = "Mixture-of-experts edge inference simulator and DPPO trainer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// JSON config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scheme for one seed; writes <out>/<scheme>_seed<N>.csv and .json.
    Run {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        scheme: SchemeId,
        /// Defaults to the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Trained policy, required for moe_dynamic.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long = "d-fixed", default_value_t = DEFAULT_D_FIXED)]
        d_fixed: u32,
    },
    /// Train the dynamic scheme; writes policy.json, periodic checkpoints and train_log.csv to <out>.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        /// Learner seed; defaults to the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out/train")]
        out: PathBuf,
        /// JSON trainer hyperparameters.
        #[arg(long = "train-config")]
        train_config: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run schemes across seeds and write a summary CSV.
    Compare {
        #[command(flatten)]
        config: ConfigArg,
        /// Inclusive range A..B or a comma list.
        #[arg(long, default_value = "1..3")]
        seeds: String,
        /// Comma-separated scheme names; all four by default.
        #[arg(long, value_delimiter = ',')]
        schemes: Option<Vec<SchemeId>>,
        #[arg(long, default_value = "out/summary.csv")]
        out: PathBuf,
        /// Also write every run's records and metrics here.
        #[arg(long = "runs-dir")]
        runs_dir: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long = "d-fixed", default_value_t = DEFAULT_D_FIXED)]
        d_fixed: u32,
    },
    /// Validate a config and print it with defaults filled in.
    Validate {
        #[command(flatten)]
        config: ConfigArg,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn config(arg: &ConfigArg) -> Result<SystemConfig, Failure> {
    let loaded = match &arg.config {
        Some(path) => load_config(path),
        None => {
            let mut cfg = SystemConfig::default();
            apply_seed_env(&mut cfg).and_then(|_| validate_config(cfg).map_err(LoadError::Invalid))
        }
    };
    loaded.map_err(|e| match e {
        LoadError::Io { .. } => Failure::Runtime(e.to_string()),
        _ => Failure::Usage(e.to_string()),
    })
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    write_atomic(path, text.as_bytes()).map_err(|e| Failure::Runtime(format!("writing {}: {e}", path.display())))
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Validate { config: arg } => {
            let cfg = config(&arg)?;
            println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
            eprintln!("config_hash={}", cfg.hash());
        }
        Command::Run {
            config: arg,
            scheme,
            seed,
            out,
            checkpoint,
            d_fixed,
        } => {
            let cfg = config(&arg)?;
            let seed = seed.unwrap_or(cfg.seed);
            let dynamic = checkpoint.as_deref().map(|p| load_dynamic(&cfg, p)).transpose()?;
            let output = run_scheme(&cfg, scheme, seed, d_fixed, dynamic.as_ref())?;
            let (csv, json) = write_run(&out, &output)?;
            let m = &output.metrics;
            println!(
                "{scheme} seed={seed} energy={:.3} J acc_sat={:.4} lat_sat={:.4} tasks={} failed={}",
                m.total_energy_j, m.acc_sat_rate, m.lat_sat_rate, m.tasks, m.failed
            );
            println!("wrote {} and {}", csv.display(), json.display());
        }
        Command::Train {
            config: arg,
            seed,
            out,
            train_config,
            iterations,
            workers,
        } => {
            let cfg = config(&arg)?;
            let mut hp = match train_config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| Failure::Runtime(format!("reading {}: {e}", path.display())))?;
                    serde_json::from_str::<TrainConfig>(&text)
                        .map_err(|e| Failure::Usage(format!("parsing {}: {e}", path.display())))?
                }
                None => TrainConfig::default(),
            };
            if let Some(seed) = seed {
                hp.seed = Some(seed);
            }
            if let Some(n) = iterations {
                hp.iterations = n;
            }
            if let Some(n) = workers {
                hp.workers = n;
                hp.worker_seeds.clear();
            }
            hp.validate().map_err(Failure::Usage)?;
            let outcome = train(&cfg, &hp, Some(&out), |row| {
                if row.iteration % 10 == 0 {
                    eprintln!(
                        "iter {:>4} reward {:>8.4} lat_sat {:.3} acc_sat {:.3} energy {:.3} J",
                        row.iteration, row.mean_reward, row.lat_sat, row.acc_sat, row.energy_mean
                    );
                }
            })
            .map_err(|e| Failure::Runtime(e.to_string()))?;
            let log = out.join("train_log.csv");
            write(&log, &train_log_csv(&outcome.log, &outcome.config_hash, hp.seed.unwrap_or(cfg.seed)))?;
            println!("wrote {} and {}", out.join("policy.json").display(), log.display());
        }
        Command::Compare {
            config: arg,
            seeds,
            schemes,
            out,
            runs_dir,
            checkpoint,
            d_fixed,
        } => {
            let cfg = config(&arg)?;
            let seeds = parse_seeds(&seeds).map_err(|e| Failure::Usage(e.to_string()))?;
            let schemes = schemes.unwrap_or_else(|| SchemeId::ALL.to_vec());
            if schemes.is_empty() {
                return Err(Failure::Usage("no schemes given".into()));
            }
            let dynamic = checkpoint.as_deref().map(|p| load_dynamic(&cfg, p)).transpose()?;
            let rows = compare(&cfg, &schemes, &seeds, d_fixed, dynamic.as_ref(), runs_dir.as_deref())?;
            write(&out, &summary_csv(&rows, &cfg.hash(), &seeds))?;
            print!("{}", summary_table(&rows));
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
