use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use stewart_cli::manifest::{ExperimentKind, RunDir};
use stewart_cli::runs;
use stewart_cli::service::{self, DEFAULT_BIND};
use stewart_core::ExperimentConfig;

#[derive(Parser)]
#[command(name = "stewart", version, about = "Soft Stewart platform simulator: experiments and live service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration; missing keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Run directory (created if missing).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Trace letters with the friction puck.
    Trace {
        #[command(flatten)]
        common: Common,
        /// Overrides `trace.letters`.
        #[arg(long)]
        letters: Option<String>,
        /// Overrides `trace.trials`.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Kick the balanced ball and measure rejection.
    Disturb {
        #[command(flatten)]
        common: Common,
    },
    /// Frequency sweep and Bode analysis of one rotational axis.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Joint-grid workspace scan.
    Scan {
        #[command(flatten)]
        common: Common,
    },
    /// Build the dataset and train the learned inverse kinematics.
    TrainIk {
        #[command(flatten)]
        common: Common,
    },
    /// Compare learned and rigid inverse kinematics on held-out poses.
    EvalIk {
        #[command(flatten)]
        common: Common,
        /// `model.json` from a train-ik run.
        #[arg(long)]
        model: PathBuf,
        /// `dataset.csv` whose poses are excluded from evaluation.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Real-time simulation over WebSocket at `/ws`.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, env = "STEWART_BIND", default_value = DEFAULT_BIND)]
        bind: String,
    },
}

fn load(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(ExperimentConfig::from_toml(&text).with_context(|| format!("in {}", p.display()))?)
        }
        None => Ok(ExperimentConfig::default()),
    }
}

fn out_dir(common: &Common, kind: ExperimentKind) -> PathBuf {
    common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{}-seed{}", kind.name(), common.seed)))
}

fn print<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Trace { common, letters, trials } => {
            let mut config = load(common.config.as_deref())?;
            if let Some(l) = letters {
                config.trace.letters = l;
            }
            if let Some(t) = trials {
                config.trace.trials = t;
            }
            config.validate()?;
            let out = out_dir(&common, ExperimentKind::Trace);
            let (_, summary) = runs::trace(&config, common.seed, &out)?;
            print(&summary.per_letter)?;
            info!("run written to {}", out.display());
        }
        Command::Disturb { common } => {
            let config = load(common.config.as_deref())?;
            let out = out_dir(&common, ExperimentKind::Disturb);
            let (_, summary) = runs::disturb(&config, common.seed, &out)?;
            print(&summary)?;
        }
        Command::Sweep { common } => {
            let config = load(common.config.as_deref())?;
            let out = out_dir(&common, ExperimentKind::Sweep);
            let (_, result) = runs::sweep(&config, common.seed, &out)?;
            print(&serde_json::json!({
                "axis": result.axis,
                "crossover_3db_hz": result.crossover_3db,
                "crossover_180_hz": result.crossover_180,
                "failures": result.failures,
            }))?;
        }
        Command::Scan { common } => {
            let config = load(common.config.as_deref())?;
            let out = out_dir(&common, ExperimentKind::Scan);
            let (_, summary) = runs::scan(&config, common.seed, &out)?;
            print(&summary.extents)?;
        }
        Command::TrainIk { common } => {
            let config = load(common.config.as_deref())?;
            let out = out_dir(&common, ExperimentKind::TrainIk);
            let (_, summary) = runs::train_ik(&config, common.seed, &out)?;
            print(&summary)?;
        }
        Command::EvalIk { common, model, dataset } => {
            let config = load(common.config.as_deref())?;
            let out = out_dir(&common, ExperimentKind::EvalIk);
            let (_, report) = runs::eval_ik(&config, common.seed, &model, dataset.as_deref(), &out)?;
            print(&report)?;
        }
        Command::Serve { common, bind } => {
            let config = load(common.config.as_deref())?;
            let out = out_dir(&common, ExperimentKind::Serve);
            let dir = RunDir::create(&out, ExperimentKind::Serve, common.seed, &config)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(&bind).await.with_context(|| format!("binding {bind}"))?;
                let handle = service::start(config, common.seed, listener).await?;
                println!("listening on ws://{}/ws", handle.addr);
                tokio::signal::ctrl_c().await?;
                info!("shutting down");
                handle.shutdown().await
            })?;
            dir.finish()?;
        }
    }
    Ok(())
}
