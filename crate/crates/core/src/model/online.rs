use std::collections::BTreeMap;

use rand::Rng;
use trajectron_nn::{Real, Tensor};

use crate::dataio::{AgentId, AgentState};
use crate::error::{CoreError, Result};
use crate::graph::{online_modulation_slice, proximity_pairs, ModulationCounters};

use super::encoder::EncoderStepper;
use super::frame::Frame;
use super::predict::{sample_encoded, Encoded, PredictOptions, PredictionBatch};
use super::Model;

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub agent: AgentId,
    pub node_type: String,
    pub state: AgentState,
}

/// Stateful predictor fed one step of observations at a time. Each step
/// runs the encoder cells once per present agent and advances the edge
/// counters once, so its encodings match a batch encoding of the same
/// observations from the first step.
#[derive(Debug, Clone)]
pub struct OnlinePredictor<'m, S: Real> {
    model: &'m Model<S>,
    /// Graph index of every agent ever seen, in order of first appearance.
    index: BTreeMap<AgentId, usize>,
    ids: Vec<AgentId>,
    types: Vec<String>,
    counters: ModulationCounters,
    stepper: EncoderStepper<S>,
    current: Vec<Observation>,
    steps: usize,
}

impl<'m, S: Real> OnlinePredictor<'m, S> {
    pub fn new(model: &'m Model<S>) -> Self {
        OnlinePredictor {
            model,
            index: BTreeMap::new(),
            ids: Vec::new(),
            types: Vec::new(),
            counters: ModulationCounters::new(model.config.filters.clone()),
            stepper: EncoderStepper::new(),
            current: Vec::new(),
            steps: 0,
        }
    }

    /// Steps through a warm-up history, one slice of observations per step.
    pub fn warm_up(model: &'m Model<S>, history: &[Vec<Observation>]) -> Result<Self> {
        let mut p = OnlinePredictor::new(model);
        for obs in history {
            p.step(obs)?;
        }
        Ok(p)
    }

    /// Advances by one timestep. Unseen agents start from zero state.
    pub fn step(&mut self, observations: &[Observation]) -> Result<()> {
        let mut obs = observations.to_vec();
        obs.sort_by_key(|o| o.agent);
        if let Some(w) = obs.windows(2).find(|w| w[0].agent == w[1].agent) {
            return Err(CoreError::data(format!("agent {} observed twice in one step", w[0].agent)));
        }
        for o in &obs {
            match self.index.get(&o.agent) {
                Some(&i) if self.types[i] != o.node_type => {
                    return Err(CoreError::data(format!(
                        "agent {} changed node type from {} to {}",
                        o.agent, self.types[i], o.node_type
                    )));
                }
                Some(_) => {}
                None => {
                    self.index.insert(o.agent, self.ids.len());
                    self.ids.push(o.agent);
                    self.types.push(o.node_type.clone());
                }
            }
        }
        let positions: Vec<(usize, [f64; 2])> =
            obs.iter().map(|o| (self.index[&o.agent], o.state.position)).collect();
        let connected = proximity_pairs(&positions, self.model.config.radius);
        let slice = online_modulation_slice(&mut self.counters, &connected, self.ids.len());
        let present = obs
            .iter()
            .map(|o| (o.agent, o.node_type.clone(), self.model.standardizer.standardize(&o.state)))
            .collect();
        let frame = Frame::assemble(&self.model.config, self.steps, present, |id| {
            slice
                .neighbors_of(self.index[&id])
                .into_iter()
                .map(|(j, f)| (self.ids[j], self.types[j].clone(), f))
                .collect()
        })?;
        self.stepper.step(self.model, &frame)?;
        self.current = obs;
        self.steps += 1;
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn h_enc(&self, id: AgentId) -> Option<&Tensor<S>> {
        self.stepper.h_enc(id)
    }

    pub fn encoder(&self) -> &EncoderStepper<S> {
        &self.stepper
    }

    /// Samples futures for current agents with at least `min_history`
    /// consecutive observations.
    pub fn predict<R: Rng + ?Sized>(&self, opts: &PredictOptions, rng: &mut R) -> Result<PredictionBatch> {
        let t_obs = self
            .steps
            .checked_sub(1)
            .ok_or_else(|| CoreError::Contract("predictor has not observed any step".into()))?;
        let mut ready = Vec::new();
        let mut skipped = Vec::new();
        for o in &self.current {
            let seen = self.stepper.observed_steps(o.agent);
            if seen < self.model.config.min_history {
                skipped.push((o.agent, seen));
                continue;
            }
            ready.push(Encoded {
                id: o.agent,
                node_type: o.node_type.clone(),
                h_enc: self.stepper.h_enc(o.agent).expect("current agent is encoded").clone(),
                last: o.state,
            });
        }
        Ok(PredictionBatch {
            t_obs,
            agents: sample_encoded(self.model, &ready, opts, rng)?,
            skipped,
        })
    }
}
