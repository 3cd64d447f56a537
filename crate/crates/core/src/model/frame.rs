use std::ops::Range;

use crate::dataio::{AgentId, SceneTimeline, Standardizer, STATE_DIM};
use crate::error::{CoreError, Result};
use crate::graph::{aggregate_pair_factors, compute_modulation_tensor, GraphHistory};

use super::ModelConfig;

/// Edge-encoder input of one agent for one edge type at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeInput {
    /// Sum of the standardized states of present neighbors, ascending id.
    pub neighbor_sum: [f64; STATE_DIM],
    /// `min(sum of modulation factors, 1)` over the whole neighborhood,
    /// including fading neighbors that are no longer observed.
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameAgent {
    pub id: AgentId,
    pub node_type: String,
    /// Standardized state.
    pub x: [f64; STATE_DIM],
    /// One entry per edge type of `node_type`, in attention order.
    pub edges: Vec<EdgeInput>,
}

/// Everything the encoder consumes at one timestep. Batch and online
/// encoding both go through [`Frame::assemble`], which is what makes them
/// agree bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub timestep: usize,
    /// Sorted by id.
    pub agents: Vec<FrameAgent>,
}

impl Frame {
    /// `present` holds `(id, node type, standardized state)` sorted by id;
    /// `neighborhood(id)` lists `(neighbor id, neighbor type, factor)` in any order.
    pub fn assemble<F>(
        config: &ModelConfig,
        timestep: usize,
        present: Vec<(AgentId, String, [f64; STATE_DIM])>,
        neighborhood: F,
    ) -> Result<Frame>
    where
        F: Fn(AgentId) -> Vec<(AgentId, String, f64)>,
    {
        debug_assert!(present.windows(2).all(|w| w[0].0 < w[1].0));
        let mut agents = Vec::with_capacity(present.len());
        for (id, node_type, x) in &present {
            if !config.node_types.contains(node_type) {
                return Err(CoreError::config(format!(
                    "agent {id} has unknown node type {node_type:?}"
                )));
            }
            let mut hood = neighborhood(*id);
            hood.sort_by_key(|e| e.0);
            let edges = config
                .edge_types_of(node_type)
                .iter()
                .map(|et| {
                    let other = et.other(node_type).expect("edge type touches node type");
                    let mut neighbor_sum = [0.0; STATE_DIM];
                    let mut factors = Vec::new();
                    for (j, jt, f) in &hood {
                        if jt != other {
                            continue;
                        }
                        factors.push(*f);
                        if let Ok(k) = present.binary_search_by_key(j, |p| p.0) {
                            for (acc, v) in neighbor_sum.iter_mut().zip(present[k].2) {
                                *acc += v;
                            }
                        }
                    }
                    EdgeInput {
                        neighbor_sum,
                        factor: aggregate_pair_factors(factors),
                    }
                })
                .collect();
            agents.push(FrameAgent {
                id: *id,
                node_type: node_type.clone(),
                x: *x,
                edges,
            });
        }
        Ok(Frame { timestep, agents })
    }

    pub fn get(&self, id: AgentId) -> Option<&FrameAgent> {
        self.agents
            .binary_search_by_key(&id, |a| a.id)
            .ok()
            .map(|k| &self.agents[k])
    }
}

/// Frames for `steps` of a scene, using the scene's proximity graph and the
/// batch modulation tensor.
pub fn scene_frames(
    scene: &SceneTimeline,
    graph: &GraphHistory,
    config: &ModelConfig,
    standardizer: &Standardizer,
    steps: Range<usize>,
) -> Result<Vec<Frame>> {
    let modulation = compute_modulation_tensor(&graph.mask, &config.filters);
    steps
        .map(|t| {
            let slice = modulation.slice(t);
            let present = scene
                .present_at(t)
                .map(|(id, track, s)| (id, track.node_type.clone(), standardizer.standardize(s)))
                .collect();
            Frame::assemble(config, t, present, |id| {
                let i = graph.index_of(id).expect("scene agent is in its graph");
                slice
                    .neighbors_of(i)
                    .into_iter()
                    .map(|(j, f)| (graph.agents[j], graph.node_types[j].clone(), f))
                    .collect()
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::DEFAULT_NODE_TYPE;
    use crate::graph::FilterPair;

    fn config() -> ModelConfig {
        ModelConfig {
            filters: FilterPair::new(vec![1.0], vec![]).unwrap(),
            ..ModelConfig::default()
        }
    }

    fn x(v: f64) -> [f64; STATE_DIM] {
        [v; STATE_DIM]
    }

    fn ped(id: AgentId, v: f64) -> (AgentId, String, [f64; STATE_DIM]) {
        (id, DEFAULT_NODE_TYPE.to_string(), x(v))
    }

    #[test]
    fn isolated_agent_has_zero_sum_and_factor() {
        let f = Frame::assemble(&config(), 0, vec![ped(1, 1.0)], |_| vec![]).unwrap();
        assert_eq!(f.agents[0].edges, vec![EdgeInput { neighbor_sum: x(0.0), factor: 0.0 }]);
    }

    #[test]
    fn absent_fading_neighbor_counts_in_factor_only() {
        let hood = |id: AgentId| {
            let p = DEFAULT_NODE_TYPE.to_string();
            match id {
                1 => vec![(2, p.clone(), 0.5), (9, p, 0.25)],
                _ => vec![(1, p, 0.5)],
            }
        };
        let f = Frame::assemble(&config(), 0, vec![ped(1, 1.0), ped(2, 2.0)], hood).unwrap();
        assert_eq!(f.agents[0].edges[0].neighbor_sum, x(2.0));
        assert_eq!(f.agents[0].edges[0].factor, 0.75);
        assert_eq!(f.agents[1].edges[0].factor, 0.5);
    }

    #[test]
    fn neighbor_order_does_not_matter() {
        let p = DEFAULT_NODE_TYPE.to_string();
        let present = vec![ped(1, 0.1), ped(2, 0.2), ped(3, 0.3), ped(4, 0.4)];
        let a = Frame::assemble(&config(), 0, present.clone(), |_| {
            vec![(2, p.clone(), 0.3), (3, p.clone(), 0.3), (4, p.clone(), 0.3)]
        })
        .unwrap();
        let b = Frame::assemble(&config(), 0, present, |_| {
            vec![(4, p.clone(), 0.3), (2, p.clone(), 0.3), (3, p.clone(), 0.3)]
        })
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_node_type_is_config_error() {
        let r = Frame::assemble(&config(), 0, vec![(1, "CAR".into(), x(0.0))], |_| vec![]);
        assert!(matches!(r, Err(CoreError::Config(_))));
    }
}
