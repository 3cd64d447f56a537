//! Command-line front end: `train`, `evaluate`, `predict`, `plot` and `bench`.

pub mod commands;
pub mod config;
pub mod plot;
pub mod records;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use trajectron_core::model::SampleMode;
use trajectron_core::{CoreError, Result};

use crate::commands::PredictArgs;
use crate::config::{Overrides, Precision, RunConfig};

/// Environment variable capping the evaluation worker threads.
pub const THREADS_ENV: &str = "TRAJECTRON_THREADS";

/// Exit status of rejected configuration or input data.
pub const EXIT_INPUT: i32 = 2;
/// Exit status of failures after the inputs were accepted.
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "trajectron", version, about = "Multi-agent trajectory forecasting")]
pub struct Cli {
    /// Run configuration (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; nothing is written outside it.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Floating-point width of the model, 32 or 64.
    #[arg(long, global = true)]
    pub precision: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoints and the loss history.
    Train,
    /// Run the held-out evaluation protocol and write metric tables.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Held-out manifest set; overrides the config's `fold`.
        #[arg(long)]
        fold: Option<String>,
    },
    /// Sample futures for one scene file and write them as JSONL.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 20)]
        n_samples: usize,
        /// `full` or `z_best`.
        #[arg(long, default_value = "full")]
        mode: String,
        /// Last observed step; defaults to the scene's last step.
        #[arg(long)]
        t_obs: Option<usize>,
    },
    /// Render predicted samples over their scene as SVG.
    Plot {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        scene: PathBuf,
    },
    /// Time sampling in both modes and incremental against full encoding.
    Bench {
        /// Untrained weights are used when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

/// Exit status for a failed run: input problems are distinguished from
/// failures during the computation.
pub fn exit_code(err: &CoreError) -> i32 {
    match err {
        CoreError::Parse { .. } | CoreError::Data(_) | CoreError::Config(_) | CoreError::Contract(_) => EXIT_INPUT,
        CoreError::Diverged { .. } | CoreError::Nn(_) | CoreError::Io(_) => EXIT_RUNTIME,
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CoreError::config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    // a pool already built by an earlier call in this process is kept
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// The config for a command: `--config` when given, else `fallback` when it
/// exists, else defaults. Command-line flags override file values.
fn resolve_config(cli: &Cli, fallback: Option<PathBuf>) -> Result<RunConfig> {
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        precision: cli.precision.as_deref().map(str::parse::<Precision>).transpose()?,
    };
    let path = cli.config.clone().or(fallback.filter(|p| p.is_file()));
    match path {
        Some(p) => RunConfig::load(&p, &overrides),
        None => RunConfig::from_text("", &std::env::current_dir()?, &overrides),
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    configure_threads()?;
    match &cli.command {
        Command::Train => {
            if cli.config.is_none() {
                return Err(CoreError::config("train needs --config"));
            }
            commands::cmd_train(&resolve_config(cli, None)?)
        }
        Command::Evaluate { checkpoint, fold } => {
            let mut cfg = resolve_config(cli, sidecar(checkpoint))?;
            if let Some(f) = fold {
                // re-validate against the manifest's split names
                let mut kv = cfg.to_kv();
                kv.insert("fold", f);
                cfg = RunConfig::from_text(&kv.render(), Path::new("."), &Overrides::default())?;
            }
            commands::cmd_evaluate(&cfg, checkpoint)
        }
        Command::Predict {
            checkpoint,
            scene,
            n_samples,
            mode,
            t_obs,
        } => {
            let cfg = resolve_config(cli, sidecar(checkpoint))?;
            let args = PredictArgs {
                checkpoint: checkpoint.clone(),
                scene: scene.clone(),
                n_samples: *n_samples,
                mode: mode.parse::<SampleMode>()?,
                t_obs: *t_obs,
            };
            commands::cmd_predict(&cfg, &args)
        }
        Command::Plot { samples, scene } => commands::cmd_plot(&resolve_config(cli, None)?, samples, scene),
        Command::Bench { checkpoint } => {
            let cfg = resolve_config(cli, checkpoint.as_deref().and_then(sidecar))?;
            commands::cmd_bench(&cfg, checkpoint.as_deref())
        }
    }
}

/// The training config written beside a checkpoint.
fn sidecar(checkpoint: &Path) -> Option<PathBuf> {
    Some(checkpoint.parent()?.join(commands::effective_config_name("train")))
}
