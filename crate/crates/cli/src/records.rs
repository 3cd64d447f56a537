//! JSONL sample records: one object per (agent, sample).

use serde::{Deserialize, Serialize};
use trajectron_core::dataio::AgentId;
use trajectron_core::model::PredictionBatch;
use trajectron_core::{CoreError, Result};
use trajectron_nn::GmmParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmRecord {
    pub log_weights: Vec<f64>,
    pub means: Vec<[f64; 2]>,
    pub scales: Vec<[f64; 2]>,
    pub correlations: Vec<f64>,
}

impl From<&GmmParams> for GmmRecord {
    fn from(g: &GmmParams) -> Self {
        GmmRecord {
            log_weights: g.log_weights.clone(),
            means: g.means.clone(),
            scales: g.scales.clone(),
            correlations: g.correlations.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub agent: AgentId,
    pub node_type: String,
    pub t_obs: usize,
    pub mode: String,
    pub sample: usize,
    pub z: usize,
    /// Predicted positions for steps `t_obs + 1 ..= t_obs + horizon`.
    pub positions: Vec<[f64; 2]>,
    /// Velocity mixture of each predicted step.
    pub gmm: Vec<GmmRecord>,
}

/// Agents in id order, samples in draw order.
pub fn records(batch: &PredictionBatch, mode: &str) -> Vec<SampleRecord> {
    batch
        .agents
        .iter()
        .flat_map(|a| {
            a.samples.iter().enumerate().map(move |(k, s)| SampleRecord {
                agent: a.agent,
                node_type: a.node_type.clone(),
                t_obs: batch.t_obs,
                mode: mode.to_string(),
                sample: k,
                z: s.z,
                positions: s.positions.clone(),
                gmm: s.gmm.iter().map(GmmRecord::from).collect(),
            })
        })
        .collect()
}

pub fn to_jsonl(records: &[SampleRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn parse_jsonl(text: &str) -> Result<Vec<SampleRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CoreError::Parse {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}
