use std::collections::BTreeMap;

use trajectron_nn::{Real, Tensor};

use crate::dataio::{AgentId, SceneTimeline, Standardizer, STATE_DIM};
use crate::error::{CoreError, Result};
use crate::graph::build_graph_history;

use super::frame::{scene_frames, FrameAgent};
use super::{ModelConfig, VELOCITY_DIM};

/// One training or evaluation example: an agent observed continuously for
/// at least `min_history` steps up to `t_obs` with the full horizon after it.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSample {
    pub scene: usize,
    pub agent: AgentId,
    pub node_type: String,
    pub t_obs: usize,
    /// Encoder inputs, oldest first; at most `history_len` long.
    pub history: Vec<FrameAgent>,
    pub history_positions: Vec<[f64; 2]>,
    pub last_position: [f64; 2],
    pub last_velocity: [f64; 2],
    pub future_velocity: Vec<[f64; 2]>,
    pub future_position: Vec<[f64; 2]>,
}

/// All samples of `scenes`, ordered by scene, agent id, then `t_obs`.
pub fn extract_samples(
    scenes: &[SceneTimeline],
    config: &ModelConfig,
    standardizer: &Standardizer,
) -> Result<Vec<AgentSample>> {
    let mut out = Vec::new();
    for (si, scene) in scenes.iter().enumerate() {
        let graph = build_graph_history(scene, config.radius)?;
        let frames = scene_frames(scene, &graph, config, standardizer, 0..scene.n_steps)?;
        for (&id, track) in &scene.agents {
            for seg in &track.segments {
                let first = seg.start + config.min_history - 1;
                let Some(last) = seg.end().checked_sub(config.horizon + 1) else {
                    continue;
                };
                for t_obs in first..=last {
                    let len = config.history_len.min(t_obs - seg.start + 1);
                    let window = t_obs + 1 - len..=t_obs;
                    let history = window
                        .clone()
                        .map(|t| frames[t].get(id).cloned().expect("present agent is framed"))
                        .collect();
                    let state = |t: usize| seg.get(t).expect("inside segment");
                    let future = t_obs + 1..=t_obs + config.horizon;
                    out.push(AgentSample {
                        scene: si,
                        agent: id,
                        node_type: track.node_type.clone(),
                        t_obs,
                        history,
                        history_positions: window.map(|t| state(t).position).collect(),
                        last_position: state(t_obs).position,
                        last_velocity: state(t_obs).velocity,
                        future_velocity: future.clone().map(|t| state(t).velocity).collect(),
                        future_position: future.map(|t| state(t).position).collect(),
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Encoder inputs of one history step for every row of a batch.
#[derive(Debug, Clone)]
pub struct BatchStep<S> {
    pub x: Tensor<S>,
    /// `[rows, 2 * STATE_DIM]` per edge type: `[x ; neighbor sum]`.
    pub edge_inputs: Vec<Tensor<S>>,
    /// `[rows, 1]` aggregated modulation per edge type.
    pub factors: Vec<Tensor<S>>,
    /// `[rows, 1]` with 0 on padding; `None` when no row is padded.
    pub mask: Option<Tensor<S>>,
}

/// Same-type samples packed into tensors, histories right-aligned.
#[derive(Debug, Clone)]
pub struct SampleBatch<S> {
    pub node_type: String,
    pub steps: Vec<BatchStep<S>>,
    /// Ground-truth velocities, one `[rows, 2]` tensor per horizon step.
    pub future: Vec<Tensor<S>>,
    /// Last observed velocity, the decoder's first previous output.
    pub y_prev: Tensor<S>,
    rows: usize,
}

impl<S: Real> SampleBatch<S> {
    pub fn new(samples: &[&AgentSample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| CoreError::Contract("empty sample batch".into()))?;
        let node_type = first.node_type.clone();
        if samples.iter().any(|s| s.node_type != node_type) {
            return Err(CoreError::Contract("mixed node types in one batch".into()));
        }
        let horizon = first.future_velocity.len();
        if samples.iter().any(|s| s.future_velocity.len() != horizon || s.history.is_empty()) {
            return Err(CoreError::Contract("samples disagree on horizon or lack history".into()));
        }
        let rows = samples.len();
        let n_edges = first.history[0].edges.len();
        let width = samples.iter().map(|s| s.history.len()).max().unwrap_or(0);
        let mut steps = Vec::with_capacity(width);
        for k in 0..width {
            let mut x = Vec::with_capacity(rows * STATE_DIM);
            let mut edge_inputs = vec![Vec::with_capacity(rows * 2 * STATE_DIM); n_edges];
            let mut factors = vec![Vec::with_capacity(rows); n_edges];
            let mut mask = Vec::with_capacity(rows);
            for s in samples {
                let pad = width - s.history.len();
                match k.checked_sub(pad).map(|i| &s.history[i]) {
                    Some(a) => {
                        x.extend(a.x.iter().map(|&v| S::c(v)));
                        for (e, input) in a.edges.iter().enumerate() {
                            edge_inputs[e].extend(a.x.iter().chain(&input.neighbor_sum).map(|&v| S::c(v)));
                            factors[e].push(S::c(input.factor));
                        }
                        mask.push(S::one());
                    }
                    None => {
                        x.extend(std::iter::repeat_n(S::zero(), STATE_DIM));
                        for e in 0..n_edges {
                            edge_inputs[e].extend(std::iter::repeat_n(S::zero(), 2 * STATE_DIM));
                            factors[e].push(S::zero());
                        }
                        mask.push(S::zero());
                    }
                }
            }
            let padded = mask.iter().any(|&m| m == S::zero());
            steps.push(BatchStep {
                x: Tensor::from_vec(&[rows, STATE_DIM], x)?,
                edge_inputs: edge_inputs
                    .into_iter()
                    .map(|d| Tensor::from_vec(&[rows, 2 * STATE_DIM], d))
                    .collect::<std::result::Result<_, _>>()?,
                factors: factors
                    .into_iter()
                    .map(|d| Tensor::from_vec(&[rows, 1], d))
                    .collect::<std::result::Result<_, _>>()?,
                mask: if padded {
                    Some(Tensor::from_vec(&[rows, 1], mask)?)
                } else {
                    None
                },
            });
        }
        let velocities = |f: &dyn Fn(&AgentSample) -> [f64; 2]| -> Result<Tensor<S>> {
            let data = samples.iter().flat_map(|s| f(s)).map(|v| S::c(v)).collect();
            Ok(Tensor::from_vec(&[rows, VELOCITY_DIM], data)?)
        };
        let future = (0..horizon)
            .map(|t| velocities(&|s| s.future_velocity[t]))
            .collect::<Result<_>>()?;
        Ok(SampleBatch {
            node_type,
            steps,
            future,
            y_prev: velocities(&|s| s.last_velocity)?,
            rows,
        })
    }

    /// Splits samples by node type; batches are in node-type order.
    pub fn group(samples: &[&AgentSample]) -> Result<Vec<Self>> {
        let mut by_type: BTreeMap<&str, Vec<&AgentSample>> = BTreeMap::new();
        for s in samples {
            by_type.entry(s.node_type.as_str()).or_default().push(s);
        }
        by_type.values().map(|v| SampleBatch::new(v)).collect()
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{make_constant_velocity, DEFAULT_NODE_TYPE};

    #[test]
    fn samples_respect_history_and_horizon() {
        let config = ModelConfig {
            min_history: 3,
            history_len: 5,
            horizon: 4,
            ..ModelConfig::default()
        };
        let scenes = make_constant_velocity(1, 2, 12, 0.0, 1).unwrap();
        let samples = extract_samples(&scenes, &config, &Standardizer::identity()).unwrap();
        // t_obs in 2..=7 for each of two agents
        assert_eq!(samples.len(), 12);
        let s = &samples[0];
        assert_eq!((s.agent, s.t_obs, s.history.len()), (0, 2, 3));
        assert_eq!(samples[5].history.len(), 5);
        assert_eq!(s.future_velocity.len(), 4);
        assert_eq!(s.node_type, DEFAULT_NODE_TYPE);
    }

    #[test]
    fn short_histories_are_right_aligned() {
        let config = ModelConfig {
            min_history: 2,
            history_len: 4,
            horizon: 2,
            ..ModelConfig::default()
        };
        let scenes = make_constant_velocity(1, 1, 8, 0.0, 2).unwrap();
        let samples = extract_samples(&scenes, &config, &Standardizer::identity()).unwrap();
        let short = &samples[0];
        let long = &samples[3];
        assert_eq!((short.history.len(), long.history.len()), (2, 4));
        let batch = SampleBatch::<f64>::new(&[short, long]).unwrap();
        assert_eq!(batch.steps.len(), 4);
        let m = batch.steps[1].mask.as_ref().unwrap();
        assert_eq!(m.data(), &[0.0, 1.0]);
        assert!(batch.steps[2].mask.is_none());
        assert_eq!(batch.steps[0].x.row_slice(0), &[0.0; STATE_DIM]);
        assert_eq!(batch.steps[2].x.row_slice(0), &short.history[0].x);
        assert_eq!(batch.y_prev.row_slice(1), &long.last_velocity);
    }
}
