use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use trajectron_nn::Real;

use crate::dataio::{AgentId, SceneTimeline};
use crate::error::{CoreError, Result};
use crate::model::{predict, Model, PredictOptions, SampleMode};

use super::baselines;
use super::bootstrap::{bootstrap_ci, DEFAULT_CONFIDENCE, DEFAULT_RESAMPLES};
use super::kde::{clouds_by_step, kde_nll_per_step};
use super::metrics::{ade, best_of_n, fde, mean};

pub const METRIC_CSV_HEADER: &str = "fold,method,config,metric,value,ci_lo,ci_hi,n";
pub const NLL_CSV_HEADER: &str = "fold,method,timestep,nll,ci_lo,ci_hi";

pub const MODEL_METHOD: &str = "trajectron";
pub const CONST_VEL_METHOD: &str = "const_vel";
pub const LINEAR_METHOD: &str = "linear";
/// Config label of the deterministic baselines.
pub const DETERMINISTIC: &str = "deterministic";

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    /// Trajectories sampled per agent and prediction step.
    pub n_samples: usize,
    /// Best-of-N is reported only when set.
    pub bon_n: Option<usize>,
    pub history_len: usize,
    pub min_history: usize,
    pub horizon: usize,
    /// Prediction steps are `t_obs = min_history - 1 + k * stride`.
    pub obs_stride: usize,
    pub confidence: f64,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            n_samples: 2000,
            bon_n: Some(100),
            history_len: 8,
            min_history: 8,
            horizon: 12,
            obs_stride: 1,
            confidence: DEFAULT_CONFIDENCE,
            resamples: DEFAULT_RESAMPLES,
            seed: 0,
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(CoreError::config("evaluation needs at least 2 samples for the KDE"));
        }
        if let Some(n) = self.bon_n {
            if n == 0 || n > self.n_samples {
                return Err(CoreError::config(format!(
                    "best-of-N needs 1 <= N <= n_samples, got N = {n} with {} samples",
                    self.n_samples
                )));
            }
        }
        if self.min_history < 2 || self.min_history > self.history_len {
            return Err(CoreError::config("need 2 <= min_history <= history_len"));
        }
        if self.horizon == 0 || self.obs_stride == 0 {
            return Err(CoreError::config("horizon and obs_stride must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub fold: String,
    pub method: String,
    pub config: String,
    pub metric: String,
    pub value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NllRow {
    pub fold: String,
    /// `method/config`.
    pub method: String,
    /// 1-based prediction step.
    pub timestep: usize,
    pub nll: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Per-method, per-agent values behind a [`MetricTable`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MethodValues {
    pub method: String,
    pub config: String,
    /// Per-agent ADE, averaged over that agent's samples.
    pub ade: Vec<f64>,
    pub fde: Vec<f64>,
    pub bon_ade: Vec<f64>,
    pub bon_fde: Vec<f64>,
    /// Per-agent NLL at every prediction step; empty for deterministic methods.
    pub nll_steps: Vec<Vec<f64>>,
}

impl MethodValues {
    fn new(method: &str, config: &str) -> Self {
        MethodValues {
            method: method.into(),
            config: config.into(),
            ..Default::default()
        }
    }

    fn append(&mut self, other: MethodValues) {
        self.ade.extend(other.ade);
        self.fde.extend(other.fde);
        self.bon_ade.extend(other.bon_ade);
        self.bon_fde.extend(other.bon_fde);
        self.nll_steps.extend(other.nll_steps);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricTable {
    pub fold: String,
    pub rows: Vec<MetricRow>,
    pub timesteps: Vec<NllRow>,
    pub values: Vec<MethodValues>,
    /// Present at a prediction step but observed for fewer than `min_history` steps.
    pub skipped_short_history: usize,
    /// Eligible by history but leaving before the horizon ends.
    pub skipped_no_future: usize,
}

impl MetricTable {
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from(METRIC_CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.fold, r.method, r.config, r.metric, r.value, r.ci_lo, r.ci_hi, r.n
            );
        }
        s
    }

    pub fn timestep_csv(&self) -> String {
        let mut s = String::from(NLL_CSV_HEADER);
        s.push('\n');
        for r in &self.timesteps {
            let _ = writeln!(s, "{},{},{},{},{},{}", r.fold, r.method, r.timestep, r.nll, r.ci_lo, r.ci_hi);
        }
        s
    }

    pub fn get(&self, method: &str, config: &str, metric: &str) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.config == config && r.metric == metric)
    }

    /// Every value finite and inside its interval.
    pub fn validate(&self) -> Result<()> {
        let rows = self.rows.iter().map(|r| (r.value, r.ci_lo, r.ci_hi));
        let steps = self.timesteps.iter().map(|r| (r.nll, r.ci_lo, r.ci_hi));
        for (v, lo, hi) in rows.chain(steps) {
            if !(v.is_finite() && lo.is_finite() && hi.is_finite() && lo <= v && v <= hi) {
                return Err(CoreError::data(format!("metric {v} outside interval [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// Agent positions from the start of its history window to `t_obs`, and its
/// next `horizon` positions. `None` when either is unavailable.
fn agent_window(
    scene: &SceneTimeline,
    id: AgentId,
    t_obs: usize,
    opts: &EvalOptions,
) -> std::result::Result<(Vec<[f64; 2]>, Vec<[f64; 2]>), Skip> {
    let seg = scene.agents[&id].segment_at(t_obs).ok_or(Skip::Absent)?;
    let start = seg.start.max((t_obs + 1).saturating_sub(opts.history_len));
    if t_obs + 1 - start < opts.min_history {
        return Err(Skip::ShortHistory);
    }
    if t_obs + opts.horizon >= seg.end() {
        return Err(Skip::NoFuture);
    }
    let pos = |t: usize| seg.get(t).expect("inside segment").position;
    Ok((
        (start..=t_obs).map(pos).collect(),
        (t_obs + 1..=t_obs + opts.horizon).map(pos).collect(),
    ))
}

enum Skip {
    Absent,
    ShortHistory,
    NoFuture,
}

#[derive(Default)]
struct SceneResult {
    values: Vec<MethodValues>,
    short: usize,
    no_future: usize,
}

fn method_slots(with_model: bool) -> Vec<MethodValues> {
    let mut v = Vec::new();
    if with_model {
        v.push(MethodValues::new(MODEL_METHOD, &SampleMode::Full.to_string()));
        v.push(MethodValues::new(MODEL_METHOD, &SampleMode::ZBest.to_string()));
    }
    v.push(MethodValues::new(CONST_VEL_METHOD, DETERMINISTIC));
    v.push(MethodValues::new(LINEAR_METHOD, DETERMINISTIC));
    v
}

fn push_deterministic(slot: &mut MethodValues, pred: &[[f64; 2]], truth: &[[f64; 2]], bon: bool) -> Result<()> {
    let (a, f) = (ade(pred, truth)?, fde(pred, truth)?);
    slot.ade.push(a);
    slot.fde.push(f);
    if bon {
        slot.bon_ade.push(a);
        slot.bon_fde.push(f);
    }
    Ok(())
}

fn push_samples(slot: &mut MethodValues, samples: &[Vec<[f64; 2]>], truth: &[[f64; 2]], opts: &EvalOptions) -> Result<()> {
    let mut ades = Vec::with_capacity(samples.len());
    let mut fdes = Vec::with_capacity(samples.len());
    for s in samples {
        ades.push(ade(s, truth)?);
        fdes.push(fde(s, truth)?);
    }
    slot.ade.push(mean(&ades));
    slot.fde.push(mean(&fdes));
    if let Some(n) = opts.bon_n {
        let (a, f) = best_of_n(samples, truth, n)?;
        slot.bon_ade.push(a);
        slot.bon_fde.push(f);
    }
    slot.nll_steps.push(kde_nll_per_step(&clouds_by_step(samples), truth)?);
    Ok(())
}

fn evaluate_scene<S: Real>(
    model: Option<&Model<S>>,
    scene: &SceneTimeline,
    stream: u64,
    opts: &EvalOptions,
) -> Result<SceneResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(stream);
    let mut out = SceneResult {
        values: method_slots(model.is_some()),
        ..Default::default()
    };
    let first = opts.min_history - 1;
    let last = match scene.n_steps.checked_sub(opts.horizon + 1) {
        Some(l) if l >= first => l,
        _ => return Ok(out),
    };
    for t_obs in (first..=last).step_by(opts.obs_stride) {
        let mut eligible = Vec::new();
        for (id, _, _) in scene.present_at(t_obs) {
            match agent_window(scene, id, t_obs, opts) {
                Ok(w) => eligible.push((id, w)),
                Err(Skip::ShortHistory) => out.short += 1,
                Err(Skip::NoFuture) => out.no_future += 1,
                Err(Skip::Absent) => {}
            }
        }
        if eligible.is_empty() {
            continue;
        }
        let mut slot = 0;
        if let Some(model) = model {
            for mode in [SampleMode::Full, SampleMode::ZBest] {
                let batch = predict(model, scene, t_obs, &PredictOptions::new(opts.n_samples, mode), &mut rng)?;
                for (id, (_, truth)) in &eligible {
                    let agent = batch.get(*id).ok_or_else(|| {
                        CoreError::Contract(format!("agent {id} eligible at step {t_obs} but not predicted"))
                    })?;
                    let samples: Vec<Vec<[f64; 2]>> = agent.samples.iter().map(|s| s.positions.clone()).collect();
                    push_samples(&mut out.values[slot], &samples, truth, opts)?;
                }
                slot += 1;
            }
        }
        for (_, (history, truth)) in &eligible {
            let bon = opts.bon_n.is_some();
            push_deterministic(&mut out.values[slot], &baselines::constant_velocity(history, opts.horizon)?, truth, bon)?;
            push_deterministic(&mut out.values[slot + 1], &baselines::linear(history, opts.horizon)?, truth, bon)?;
        }
    }
    Ok(out)
}

fn summarize(fold: &str, values: &[MethodValues], opts: &EvalOptions) -> Result<(Vec<MetricRow>, Vec<NllRow>)> {
    let mut seed = opts.seed;
    let mut ci = |v: &[f64]| -> Result<(f64, f64, f64)> {
        let m = mean(v);
        seed = seed.wrapping_add(1);
        if v.len() < 2 {
            return Ok((m, m, m));
        }
        let (lo, hi) = bootstrap_ci(v, opts.confidence, opts.resamples, seed)?;
        Ok((m, lo, hi))
    };
    let mut rows = Vec::new();
    let mut steps = Vec::new();
    for mv in values {
        if mv.ade.is_empty() {
            continue;
        }
        let mut metrics: Vec<(&str, Vec<f64>)> = vec![("ade", mv.ade.clone()), ("fde", mv.fde.clone())];
        if opts.bon_n.is_some() {
            metrics.push(("bon_ade", mv.bon_ade.clone()));
            metrics.push(("bon_fde", mv.bon_fde.clone()));
        }
        if !mv.nll_steps.is_empty() {
            metrics.push(("nll", mv.nll_steps.iter().map(|s| mean(s)).collect()));
        }
        for (name, v) in metrics {
            let (value, ci_lo, ci_hi) = ci(&v)?;
            rows.push(MetricRow {
                fold: fold.into(),
                method: mv.method.clone(),
                config: mv.config.clone(),
                metric: name.into(),
                value,
                ci_lo,
                ci_hi,
                n: v.len(),
            });
        }
        for t in 0..mv.nll_steps.first().map_or(0, Vec::len) {
            let v: Vec<f64> = mv.nll_steps.iter().map(|s| s[t]).collect();
            let (nll, ci_lo, ci_hi) = ci(&v)?;
            steps.push(NllRow {
                fold: fold.into(),
                method: format!("{}/{}", mv.method, mv.config),
                timestep: t + 1,
                nll,
                ci_lo,
                ci_hi,
            });
        }
    }
    Ok((rows, steps))
}

/// Runs the model in both sampling modes and both baselines on every
/// eligible agent at every prediction step of `scenes`. Scenes are
/// evaluated in parallel, each with its own random stream, and results are
/// combined in scene order. Agents weigh equally.
pub fn evaluate_fold<S: Real>(
    model: Option<&Model<S>>,
    scenes: &[SceneTimeline],
    fold: &str,
    opts: &EvalOptions,
) -> Result<MetricTable> {
    opts.validate()?;
    if let Some(m) = model {
        if m.config.horizon != opts.horizon || m.config.min_history > opts.min_history {
            return Err(CoreError::config(format!(
                "model predicts {} steps from {} observed, evaluation needs {} from {}",
                m.config.horizon, m.config.min_history, opts.horizon, opts.min_history
            )));
        }
    }
    let per_scene = scenes
        .par_iter()
        .enumerate()
        .map(|(i, s)| evaluate_scene(model, s, i as u64, opts))
        .collect::<Result<Vec<_>>>()?;
    let mut values = method_slots(model.is_some());
    let (mut short, mut no_future) = (0, 0);
    for r in per_scene {
        for (acc, v) in values.iter_mut().zip(r.values) {
            acc.append(v);
        }
        short += r.short;
        no_future += r.no_future;
    }
    if no_future > 0 {
        log::info!("fold {fold}: {no_future} agent instances skipped without a full horizon");
    }
    let (rows, timesteps) = summarize(fold, &values, opts)?;
    Ok(MetricTable {
        fold: fold.into(),
        rows,
        timesteps,
        values,
        skipped_short_history: short,
        skipped_no_future: no_future,
    })
}
