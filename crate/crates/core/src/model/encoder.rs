use std::collections::BTreeMap;

use trajectron_nn::{LstmState, Real, Tape, Tensor, Var};

use crate::dataio::{AgentId, SceneTimeline, STATE_DIM};
use crate::error::Result;
use crate::graph::build_graph_history;

use super::frame::{scene_frames, Frame, FrameAgent};
use super::sample::SampleBatch;
use super::Model;

/// Recurrent encoder state of one agent after its latest observed step.
#[derive(Debug, Clone)]
struct AgentCarry<S> {
    node: LstmState<S>,
    /// Unmodulated edge-encoder states, one per edge type.
    edges: Vec<LstmState<S>>,
    /// Modulated edge encodings at the latest step.
    edge_out: Vec<Tensor<S>>,
    attention: Tensor<S>,
    h_enc: Tensor<S>,
    observed: usize,
}

/// Eager, stateful encoder advanced one [`Frame`] at a time. Agents missing
/// from a frame lose their state; agents new to a frame start from zeros.
#[derive(Debug, Clone)]
pub struct EncoderStepper<S> {
    carries: BTreeMap<AgentId, AgentCarry<S>>,
}

impl<S: Real> Default for EncoderStepper<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn stack<S: Real>(rows: &[&[S]], cols: usize) -> Result<Tensor<S>> {
    let mut data = Vec::with_capacity(rows.len() * cols);
    for r in rows {
        data.extend_from_slice(r);
    }
    Ok(Tensor::from_vec(&[rows.len(), cols], data)?)
}

fn row_of<S: Real>(t: &Tensor<S>, r: usize) -> Tensor<S> {
    Tensor::row(t.row_slice(r))
}

fn to_s<S: Real>(v: &[f64]) -> Vec<S> {
    v.iter().map(|&x| S::c(x)).collect()
}

impl<S: Real> EncoderStepper<S> {
    pub fn new() -> Self {
        EncoderStepper {
            carries: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, model: &Model<S>, frame: &Frame) -> Result<()> {
        self.carries.retain(|id, _| frame.get(*id).is_some());
        let mut groups: BTreeMap<&str, Vec<&FrameAgent>> = BTreeMap::new();
        for a in &frame.agents {
            groups.entry(a.node_type.as_str()).or_default().push(a);
        }
        let ps = &model.params;
        let mut updated = Vec::with_capacity(frame.agents.len());
        for (nt, group) in groups {
            let node = model.node(nt)?;
            let rows = group.len();
            let nhe = model.config.nhe_hidden;
            let ee = model.config.ee_hidden;
            let fresh_node = LstmState::<S>::zeros(1, nhe);
            let fresh_edge = LstmState::<S>::zeros(1, ee);
            let carried: Vec<Option<&AgentCarry<S>>> =
                group.iter().map(|a| self.carries.get(&a.id)).collect();

            let xs: Vec<Vec<S>> = group.iter().map(|a| to_s(&a.x)).collect();
            let x_refs: Vec<&[S]> = xs.iter().map(|v| v.as_slice()).collect();
            let x = stack(&x_refs, STATE_DIM)?;
            let node_state = LstmState {
                hidden: stack(
                    &carried
                        .iter()
                        .map(|c| c.map_or(fresh_node.hidden.data(), |c| c.node.hidden.data()))
                        .collect::<Vec<_>>(),
                    nhe,
                )?,
                cell: stack(
                    &carried
                        .iter()
                        .map(|c| c.map_or(fresh_node.cell.data(), |c| c.node.cell.data()))
                        .collect::<Vec<_>>(),
                    nhe,
                )?,
            };
            let node_next = node.history.step(ps, &node_state, &x)?;

            let mut edge_next = Vec::with_capacity(node.edge_types.len());
            let mut edge_out = Vec::with_capacity(node.edge_types.len());
            for (k, et) in node.edge_types.iter().enumerate() {
                let cell = model.edge(et)?;
                let inputs: Vec<Vec<S>> = group
                    .iter()
                    .map(|a| {
                        let mut v = to_s::<S>(&a.x);
                        v.extend(to_s::<S>(&a.edges[k].neighbor_sum));
                        v
                    })
                    .collect();
                let in_refs: Vec<&[S]> = inputs.iter().map(|v| v.as_slice()).collect();
                let input = stack(&in_refs, 2 * STATE_DIM)?;
                let state = LstmState {
                    hidden: stack(
                        &carried
                            .iter()
                            .map(|c| c.map_or(fresh_edge.hidden.data(), |c| c.edges[k].hidden.data()))
                            .collect::<Vec<_>>(),
                        ee,
                    )?,
                    cell: stack(
                        &carried
                            .iter()
                            .map(|c| c.map_or(fresh_edge.cell.data(), |c| c.edges[k].cell.data()))
                            .collect::<Vec<_>>(),
                        ee,
                    )?,
                };
                let next = cell.step(ps, &state, &input)?;
                let factors: Vec<S> = group.iter().map(|a| S::c(a.edges[k].factor)).collect();
                let factor = Tensor::from_vec(&[rows, 1], factors)?;
                edge_out.push(next.hidden.mul_col(&factor)?);
                edge_next.push(next);
            }
            let (h_edges, weights) = node.attention.combine(ps, &node_next.hidden, &edge_out)?;
            let h_enc = Tensor::concat_cols(&[&h_edges, &node_next.hidden])?;

            for (r, a) in group.iter().enumerate() {
                let observed = carried[r].map_or(0, |c| c.observed) + 1;
                let carry = AgentCarry {
                    node: LstmState {
                        hidden: row_of(&node_next.hidden, r),
                        cell: row_of(&node_next.cell, r),
                    },
                    edges: edge_next
                        .iter()
                        .map(|s| LstmState {
                            hidden: row_of(&s.hidden, r),
                            cell: row_of(&s.cell, r),
                        })
                        .collect(),
                    edge_out: edge_out.iter().map(|t| row_of(t, r)).collect(),
                    attention: row_of(&weights, r),
                    h_enc: row_of(&h_enc, r),
                    observed,
                };
                updated.push((a.id, carry));
            }
        }
        self.carries.extend(updated);
        Ok(())
    }

    /// Agents with live state, ascending id.
    pub fn agents(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.carries.keys().copied()
    }

    /// `[1, ee + nhe]` encoding `[h_edges ; h_node]` at the latest step.
    pub fn h_enc(&self, id: AgentId) -> Option<&Tensor<S>> {
        self.carries.get(&id).map(|c| &c.h_enc)
    }

    pub fn h_node(&self, id: AgentId) -> Option<&Tensor<S>> {
        self.carries.get(&id).map(|c| &c.node.hidden)
    }

    /// Modulated per-edge-type encodings at the latest step.
    pub fn edge_encodings(&self, id: AgentId) -> Option<&[Tensor<S>]> {
        self.carries.get(&id).map(|c| c.edge_out.as_slice())
    }

    /// Unmodulated edge-encoder outputs at the latest step.
    pub fn edge_hidden(&self, id: AgentId) -> Option<Vec<&Tensor<S>>> {
        self.carries.get(&id).map(|c| c.edges.iter().map(|s| &s.hidden).collect())
    }

    /// `[1, K]` attention weights over edge types.
    pub fn attention(&self, id: AgentId) -> Option<&Tensor<S>> {
        self.carries.get(&id).map(|c| &c.attention)
    }

    /// Consecutive steps the agent has been observed.
    pub fn observed_steps(&self, id: AgentId) -> usize {
        self.carries.get(&id).map_or(0, |c| c.observed)
    }
}

/// Batch encoding of a whole scene from its first step: `h_enc` of every
/// present agent after each step.
pub fn encode_scene<S: Real>(
    model: &Model<S>,
    scene: &SceneTimeline,
) -> Result<Vec<BTreeMap<AgentId, Tensor<S>>>> {
    let graph = build_graph_history(scene, model.config.radius)?;
    let frames = scene_frames(scene, &graph, &model.config, &model.standardizer, 0..scene.n_steps)?;
    let mut stepper = EncoderStepper::new();
    let mut out = Vec::with_capacity(frames.len());
    for f in &frames {
        stepper.step(model, f)?;
        out.push(
            stepper
                .carries
                .iter()
                .map(|(&id, c)| (id, c.h_enc.clone()))
                .collect(),
        );
    }
    Ok(out)
}

/// Taped encoder outputs for a [`SampleBatch`].
#[derive(Debug, Clone, Copy)]
pub struct TapedEncoding {
    pub h_enc: Var,
    pub h_node: Var,
    pub attention: Var,
}

impl TapedEncoding {
    /// Differentiable history and edge encoding of right-aligned, zero-padded
    /// histories. Padded steps keep the zero state, so each row equals an
    /// encoder started at that sample's first observed step.
    pub fn encode<S: Real>(model: &Model<S>, tape: &mut Tape<S>, batch: &SampleBatch<S>) -> Result<Self> {
        let node = model.node(&batch.node_type)?;
        let rows = batch.len();
        let nhe = node.history.bind(tape)?;
        let edges = node
            .edge_types
            .iter()
            .map(|et| model.edge(et).and_then(|c| Ok(c.bind(tape)?)))
            .collect::<Result<Vec<_>>>()?;
        let (mut h, mut c) = nhe.zero_state(tape, rows);
        let mut edge_state: Vec<(Var, Var)> = edges.iter().map(|e| e.zero_state(tape, rows)).collect();
        for step in &batch.steps {
            let mask = step.mask.as_ref().map(|m| tape.constant(m.clone()));
            let x = tape.constant(step.x.clone());
            let (h2, c2) = nhe.step(tape, h, c, x)?;
            (h, c) = match mask {
                Some(m) => (tape.mul_col(h2, m)?, tape.mul_col(c2, m)?),
                None => (h2, c2),
            };
            for (k, e) in edges.iter().enumerate() {
                let input = tape.constant(step.edge_inputs[k].clone());
                let (he, ce) = edge_state[k];
                let (he2, ce2) = e.step(tape, he, ce, input)?;
                edge_state[k] = match mask {
                    Some(m) => (tape.mul_col(he2, m)?, tape.mul_col(ce2, m)?),
                    None => (he2, ce2),
                };
            }
        }
        let last = batch.steps.last().expect("nonempty history window");
        let mut keys = Vec::with_capacity(edges.len());
        for (k, &(he, _)) in edge_state.iter().enumerate() {
            let f = tape.constant(last.factors[k].clone());
            keys.push(tape.mul_col(he, f)?);
        }
        let (h_edges, attention) = node.attention.combine_tape(tape, h, &keys)?;
        let h_enc = tape.concat_cols(&[h_edges, h])?;
        Ok(TapedEncoding {
            h_enc,
            h_node: h,
            attention,
        })
    }
}
