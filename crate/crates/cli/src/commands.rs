//! Subcommand bodies. Each one loads and validates every input before it
//! creates the output directory, so a rejected run leaves nothing behind.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trajectron_core::dataio::{ingest_with, IngestOptions, SceneTimeline, Standardizer, DEFAULT_DT};
use trajectron_core::eval::bench::{bench_csv, crowd_scene, encode_speed, runtime_benchmark};
use trajectron_core::eval::evaluate_fold;
use trajectron_core::model::{extract_samples, predict, Model, PredictOptions, SampleMode};
use trajectron_core::train::{loss_csv, train};
use trajectron_core::{CoreError, Result};
use trajectron_nn::Real;

use crate::config::{Precision, RunConfig};
use crate::plot::render_svg;
use crate::records::{parse_jsonl, records, to_jsonl};

pub const LOSS_CSV: &str = "loss.csv";
pub const VALIDATION_CSV: &str = "validation.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const NLL_CSV: &str = "nll_timestep.csv";
pub const SAMPLES_JSONL: &str = "samples.jsonl";
pub const PLOT_SVG: &str = "plot.svg";
pub const BENCH_CSV: &str = "bench.csv";
pub const ENCODE_CSV: &str = "encode_speed.csv";
pub const FINAL_CHECKPOINT: &str = "final.trjw";

/// Name of the effective config a command writes beside its outputs.
pub fn effective_config_name(command: &str) -> String {
    format!("{command}.config.txt")
}

fn create_out(cfg: &RunConfig, command: &str) -> Result<()> {
    std::fs::create_dir_all(&cfg.out)?;
    write(&cfg.out, &effective_config_name(command), &cfg.render())
}

fn write(dir: &Path, name: &str, content: &str) -> Result<()> {
    std::fs::write(dir.join(name), content)?;
    Ok(())
}

fn read_text(path: &Path, what: &str) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CoreError::data(format!("cannot read {what} {}: {e}", path.display())))
}

fn load_model<S: Real>(cfg: &RunConfig, checkpoint: &Path) -> Result<Model<S>> {
    let bytes = std::fs::read(checkpoint)
        .map_err(|e| CoreError::data(format!("cannot read checkpoint {}: {e}", checkpoint.display())))?;
    Model::from_bytes(&cfg.model, &bytes).map_err(|e| match e {
        CoreError::Nn(e) => CoreError::config(format!(
            "checkpoint {} does not match the configuration: {e}",
            checkpoint.display()
        )),
        other => other,
    })
}

/// Reads an annotation file with the model's step and first node type.
pub fn load_scene(path: &Path, dt: f64, node_type: &str) -> Result<SceneTimeline> {
    let text = read_text(path, "scene")?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    ingest_with(
        &text,
        &IngestOptions {
            name,
            dt,
            stride: None,
            node_type: node_type.to_string(),
        },
    )
    .map_err(|e| match e {
        CoreError::Parse { line, msg } => CoreError::data(format!("{}:{line}: {msg}", path.display())),
        other => other,
    })
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let (scenes, _) = cfg.load_split()?;
    let probe = extract_samples(&scenes, &cfg.model, &Standardizer::fit(&scenes))?;
    if probe.is_empty() {
        return Err(CoreError::data(format!(
            "no training agent has {} observed steps followed by {} future steps",
            cfg.model.min_history, cfg.model.horizon
        )));
    }
    drop(probe);
    create_out(cfg, "train")?;
    match cfg.precision {
        Precision::F32 => train_with::<f32>(cfg, &scenes),
        Precision::F64 => train_with::<f64>(cfg, &scenes),
    }
}

fn train_with<S: Real>(cfg: &RunConfig, scenes: &[SceneTimeline]) -> Result<()> {
    let outcome = train::<S>(scenes, &cfg.model, &cfg.train, Some(&cfg.out))?;
    write(&cfg.out, LOSS_CSV, &loss_csv(&outcome.history))?;
    let mut val = String::from("step,loss\n");
    for (step, v) in &outcome.validation {
        val.push_str(&format!("{step},{v}\n"));
    }
    write(&cfg.out, VALIDATION_CSV, &val)?;
    if let Some(last) = outcome.history.last() {
        eprintln!("trained {} steps, final loss {:.4}", last.step + 1, last.total);
    }
    Ok(())
}

pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: &Path) -> Result<()> {
    match cfg.precision {
        Precision::F32 => evaluate_with::<f32>(cfg, checkpoint),
        Precision::F64 => evaluate_with::<f64>(cfg, checkpoint),
    }
}

fn evaluate_with<S: Real>(cfg: &RunConfig, checkpoint: &Path) -> Result<()> {
    let model = load_model::<S>(cfg, checkpoint)?;
    let (_, test) = cfg.load_split()?;
    if test.is_empty() {
        return Err(CoreError::config("no test scenes; set fold for manifest data"));
    }
    let table = evaluate_fold(Some(&model), &test, &cfg.fold_name(), &cfg.eval)?;
    create_out(cfg, "evaluate")?;
    write(&cfg.out, METRICS_CSV, &table.metrics_csv())?;
    write(&cfg.out, NLL_CSV, &table.timestep_csv())?;
    eprintln!(
        "skipped agent-steps: {} with too short a history, {} without a full future",
        table.skipped_short_history, table.skipped_no_future
    );
    Ok(())
}

#[derive(Debug, Clone)]
pub struct PredictArgs {
    pub checkpoint: PathBuf,
    pub scene: PathBuf,
    pub n_samples: usize,
    pub mode: SampleMode,
    /// Last observed step; the scene's last step when `None`.
    pub t_obs: Option<usize>,
}

pub fn cmd_predict(cfg: &RunConfig, args: &PredictArgs) -> Result<()> {
    match cfg.precision {
        Precision::F32 => predict_with::<f32>(cfg, args),
        Precision::F64 => predict_with::<f64>(cfg, args),
    }
}

fn predict_with<S: Real>(cfg: &RunConfig, args: &PredictArgs) -> Result<()> {
    if args.n_samples == 0 {
        return Err(CoreError::config("n_samples must be positive"));
    }
    let model = load_model::<S>(cfg, &args.checkpoint)?;
    let scene = load_scene(&args.scene, model.config.dt, &model.config.node_types[0])?;
    if scene.n_steps == 0 {
        return Err(CoreError::data("scene is empty"));
    }
    let t_obs = args.t_obs.unwrap_or(scene.n_steps - 1);
    let opts = PredictOptions {
        keep_gmm: true,
        ..PredictOptions::new(args.n_samples, args.mode)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let batch = predict(&model, &scene, t_obs, &opts, &mut rng)?;
    for (agent, observed) in &batch.skipped {
        eprintln!("agent {agent} skipped: {observed} observed steps, {} needed", model.config.min_history);
    }
    if batch.agents.is_empty() {
        return Err(CoreError::data(format!("no agent has {} observed steps at step {t_obs}", model.config.min_history)));
    }
    create_out(cfg, "predict")?;
    write(&cfg.out, SAMPLES_JSONL, &to_jsonl(&records(&batch, &args.mode.to_string())))
}

pub fn cmd_plot(cfg: &RunConfig, samples: &Path, scene: &Path) -> Result<()> {
    let records = parse_jsonl(&read_text(samples, "samples")?)?;
    let node_type = records.first().map(|r| r.node_type.clone()).unwrap_or_default();
    // positions only; the step length does not change the drawing
    let scene = load_scene(scene, DEFAULT_DT, &node_type)?;
    let svg = render_svg(&scene, &records)?;
    create_out(cfg, "plot")?;
    write(&cfg.out, PLOT_SVG, &svg)
}

pub fn cmd_bench(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<()> {
    match cfg.precision {
        Precision::F32 => bench_with::<f32>(cfg, checkpoint),
        Precision::F64 => bench_with::<f64>(cfg, checkpoint),
    }
}

fn bench_with<S: Real>(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<()> {
    // timing does not depend on the weights, so an untrained model will do
    let model = match checkpoint {
        Some(p) => load_model::<S>(cfg, p)?,
        None => Model::initialize(&cfg.model, Standardizer::identity(), cfg.seed)?,
    };
    let datasets: Vec<(String, Vec<SceneTimeline>)> =
        cfg.bench_datasets()?.into_iter().map(|s| (s.name, s.scenes)).collect();
    let crowd = crowd_scene(cfg.crowd_agents, cfg.model.history_len + 1, cfg.seed)?;
    let rows = runtime_benchmark(&model, &datasets, &cfg.bench)?;
    let speed = encode_speed(&model, &crowd, cfg.encode_repetitions)?;
    create_out(cfg, "bench")?;
    write(&cfg.out, BENCH_CSV, &bench_csv(&rows, cfg.bench.n_samples))?;
    write(
        &cfg.out,
        ENCODE_CSV,
        &format!(
            "agents,history_steps,incremental_s,full_s,ratio\n{},{},{},{},{}\n",
            cfg.crowd_agents,
            cfg.model.history_len,
            speed.incremental_s,
            speed.full_s,
            speed.ratio()
        ),
    )?;
    eprintln!("incremental step {:.1}x faster than re-encoding", speed.ratio());
    Ok(())
}
