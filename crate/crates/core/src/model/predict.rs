use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trajectron_nn::{GmmParams, Real, Tensor};

use crate::dataio::{AgentId, AgentState, SceneTimeline};
use crate::error::{CoreError, Result};
use crate::graph::build_graph_history;

use super::decoder::{integrate_velocities, DecoderContext};
use super::encoder::EncoderStepper;
use super::frame::{scene_frames, Frame};
use super::{Model, VELOCITY_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// Latent drawn from the prior for every sample.
    Full,
    /// Latent fixed to the prior's mode, lowest index on ties.
    ZBest,
}

impl fmt::Display for SampleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SampleMode::Full => "full",
            SampleMode::ZBest => "z_best",
        })
    }
}

impl FromStr for SampleMode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(SampleMode::Full),
            "z_best" => Ok(SampleMode::ZBest),
            _ => Err(CoreError::config(format!("sample mode must be full or z_best, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PredictOptions {
    pub n_samples: usize,
    pub mode: SampleMode,
    /// Keep the per-step mixtures of every sample.
    pub keep_gmm: bool,
}

impl PredictOptions {
    pub fn new(n_samples: usize, mode: SampleMode) -> Self {
        PredictOptions {
            n_samples,
            mode,
            keep_gmm: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub z: usize,
    pub velocities: Vec<[f64; 2]>,
    /// Integrated from the last observed position.
    pub positions: Vec<[f64; 2]>,
    /// Empty unless requested.
    pub gmm: Vec<GmmParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentPrediction {
    pub agent: AgentId,
    pub node_type: String,
    pub last_position: [f64; 2],
    /// Prior probabilities over latent values.
    pub prior: Vec<f64>,
    pub samples: Vec<TrajectorySample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBatch {
    pub t_obs: usize,
    /// Ascending agent id.
    pub agents: Vec<AgentPrediction>,
    /// Agents present at `t_obs` with too short a history, with their
    /// observed step count.
    pub skipped: Vec<(AgentId, usize)>,
}

impl PredictionBatch {
    pub fn get(&self, id: AgentId) -> Option<&AgentPrediction> {
        self.agents.iter().find(|a| a.agent == id)
    }
}

/// An agent ready for decoding.
pub(crate) struct Encoded<S> {
    pub id: AgentId,
    pub node_type: String,
    pub h_enc: Tensor<S>,
    pub last: AgentState,
}

/// Prediction at the last step of `scene[..=t_obs]`, encoding the
/// `history_len` steps ending at `t_obs`.
pub fn predict<S: Real, R: Rng + ?Sized>(
    model: &Model<S>,
    scene: &SceneTimeline,
    t_obs: usize,
    opts: &PredictOptions,
    rng: &mut R,
) -> Result<PredictionBatch> {
    if t_obs >= scene.n_steps {
        return Err(CoreError::data(format!(
            "t_obs {t_obs} outside scene {} of {} steps",
            scene.name, scene.n_steps
        )));
    }
    let graph = build_graph_history(scene, model.config.radius)?;
    let start = (t_obs + 1).saturating_sub(model.config.history_len);
    let frames = scene_frames(scene, &graph, &model.config, &model.standardizer, start..t_obs + 1)?;
    predict_frames(model, scene, &frames, opts, rng)
}

/// As [`predict`], from precomputed frames ending at the observation step.
pub fn predict_frames<S: Real, R: Rng + ?Sized>(
    model: &Model<S>,
    scene: &SceneTimeline,
    frames: &[Frame],
    opts: &PredictOptions,
    rng: &mut R,
) -> Result<PredictionBatch> {
    let t_obs = frames
        .last()
        .ok_or_else(|| CoreError::Contract("no frames to encode".into()))?
        .timestep;
    let mut stepper = EncoderStepper::new();
    for f in frames {
        stepper.step(model, f)?;
    }
    let mut ready = Vec::new();
    let mut skipped = Vec::new();
    for (id, track, state) in scene.present_at(t_obs) {
        let seen = stepper.observed_steps(id);
        if seen < model.config.min_history {
            log::info!("agent {id}: {seen} observed steps, need {}; skipped", model.config.min_history);
            skipped.push((id, seen));
            continue;
        }
        ready.push(Encoded {
            id,
            node_type: track.node_type.clone(),
            h_enc: stepper.h_enc(id).expect("present agent is encoded").clone(),
            last: *state,
        });
    }
    let agents = sample_encoded(model, &ready, opts, rng)?;
    Ok(PredictionBatch {
        t_obs,
        agents,
        skipped,
    })
}

/// Latents are drawn per agent from an auxiliary stream seeded by one draw
/// of `rng`; velocities come from `rng` itself, one rollout per node type.
pub(crate) fn sample_encoded<S: Real, R: Rng + ?Sized>(
    model: &Model<S>,
    agents: &[Encoded<S>],
    opts: &PredictOptions,
    rng: &mut R,
) -> Result<Vec<AgentPrediction>> {
    let n = opts.n_samples;
    if n == 0 {
        return Err(CoreError::config("n_samples must be positive"));
    }
    let mut latents = Vec::with_capacity(agents.len());
    let mut priors = Vec::with_capacity(agents.len());
    for a in agents {
        let node = model.node(&a.node_type)?;
        let prior: Vec<f64> = node
            .prior
            .forward(&model.params, &a.h_enc)?
            .softmax_rows()
            .to_f64_vec();
        let mut z_rng = ChaCha8Rng::seed_from_u64(rng.random::<u64>());
        let z: Vec<usize> = match opts.mode {
            SampleMode::ZBest => vec![argmax(&prior); n],
            SampleMode::Full => {
                let dist = WeightedIndex::new(&prior)
                    .map_err(|e| CoreError::data(format!("prior of agent {}: {e}", a.id)))?;
                (0..n).map(|_| dist.sample(&mut z_rng)).collect()
            }
        };
        latents.push(z);
        priors.push(prior);
    }

    let mut by_type: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (k, a) in agents.iter().enumerate() {
        by_type.entry(a.node_type.as_str()).or_default().push(k);
    }
    let mut samples: Vec<Vec<TrajectorySample>> = vec![Vec::new(); agents.len()];
    for (nt, members) in by_type {
        let node = model.node(nt)?;
        let h_rows: Vec<&Tensor<S>> = members.iter().map(|&k| &agents[k].h_enc).collect();
        let h_enc = stack_rows(&h_rows)?.repeat_rows(n);
        let y_prev = Tensor::from_vec(
            &[members.len(), VELOCITY_DIM],
            members
                .iter()
                .flat_map(|&k| agents[k].last.velocity)
                .map(S::c)
                .collect(),
        )?
        .repeat_rows(n);
        let z: Vec<usize> = members.iter().flat_map(|&k| latents[k].iter().copied()).collect();
        let ctx = DecoderContext::new(model, node, &h_enc, &z)?;
        let (vel, gmm) = ctx.sample(model, node, &y_prev, model.config.horizon, opts.keep_gmm, rng)?;
        let mut vel = vel.into_iter();
        let mut gmm = gmm.into_iter();
        for &k in &members {
            let start = agents[k].last.position;
            samples[k] = latents[k]
                .iter()
                .map(|&z| {
                    let velocities = vel.next().expect("one rollout per sample");
                    TrajectorySample {
                        z,
                        positions: integrate_velocities(start, &velocities, model.config.dt),
                        velocities,
                        gmm: gmm.next().expect("one mixture list per sample"),
                    }
                })
                .collect();
        }
    }
    Ok(agents
        .iter()
        .zip(samples)
        .zip(priors)
        .map(|((a, samples), prior)| AgentPrediction {
            agent: a.id,
            node_type: a.node_type.clone(),
            last_position: a.last.position,
            prior,
            samples,
        })
        .collect())
}

fn stack_rows<S: Real>(rows: &[&Tensor<S>]) -> Result<Tensor<S>> {
    let cols = rows.first().map_or(0, |t| t.cols());
    let data = rows.iter().flat_map(|t| t.data().iter().copied()).collect();
    Ok(Tensor::from_vec(&[rows.len(), cols], data)?)
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = k;
        }
    }
    best
}
