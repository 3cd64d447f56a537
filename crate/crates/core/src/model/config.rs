use std::collections::BTreeSet;

use crate::dataio::{DEFAULT_DT, DEFAULT_NODE_TYPE};
use crate::error::{CoreError, Result};
use crate::graph::{edge_types_for, EdgeType, FilterPair};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub node_types: Vec<String>,
    pub nhe_hidden: usize,
    /// Per direction of the future encoder.
    pub nfe_hidden: usize,
    pub ee_hidden: usize,
    pub attention_hidden: usize,
    pub decoder_hidden: usize,
    /// Hidden width of the prior and recognition networks.
    pub latent_mlp_hidden: usize,
    pub n_gmm_components: usize,
    pub latent_cardinality: usize,
    pub horizon: usize,
    /// Longest history fed to the encoder in training and batch prediction.
    pub history_len: usize,
    /// Agents with fewer observed steps are not predicted.
    pub min_history: usize,
    pub dt: f64,
    pub radius: f64,
    pub filters: FilterPair,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            node_types: vec![DEFAULT_NODE_TYPE.to_string()],
            nhe_hidden: 32,
            nfe_hidden: 32,
            ee_hidden: 8,
            attention_hidden: 8,
            decoder_hidden: 128,
            latent_mlp_hidden: 32,
            n_gmm_components: 16,
            latent_cardinality: 16,
            horizon: 12,
            history_len: 8,
            min_history: 8,
            dt: DEFAULT_DT,
            radius: 3.0,
            filters: FilterPair::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("nhe_hidden", self.nhe_hidden),
            ("nfe_hidden", self.nfe_hidden),
            ("ee_hidden", self.ee_hidden),
            ("attention_hidden", self.attention_hidden),
            ("decoder_hidden", self.decoder_hidden),
            ("latent_mlp_hidden", self.latent_mlp_hidden),
            ("n_gmm_components", self.n_gmm_components),
            ("latent_cardinality", self.latent_cardinality),
            ("horizon", self.horizon),
            ("history_len", self.history_len),
            ("min_history", self.min_history),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(CoreError::config(format!("{name} must be positive")));
            }
        }
        if self.min_history > self.history_len {
            return Err(CoreError::config("min_history cannot exceed history_len"));
        }
        if !(self.dt > 0.0) || !(self.radius > 0.0) {
            return Err(CoreError::config("dt and radius must be positive"));
        }
        let unique: BTreeSet<&String> = self.node_types.iter().collect();
        if self.node_types.is_empty() || unique.len() != self.node_types.len() {
            return Err(CoreError::config("node types must be nonempty and unique"));
        }
        if self.node_types.iter().any(|t| t.is_empty() || t.contains(['/', '-'])) {
            return Err(CoreError::config("node type names may not be empty or contain '/' or '-'"));
        }
        Ok(())
    }

    pub fn edge_types(&self) -> Vec<EdgeType> {
        edge_types_for(&self.node_types)
    }

    /// Edge types touching `node_type`, in the order attention sees them.
    pub fn edge_types_of(&self, node_type: &str) -> Vec<EdgeType> {
        self.edge_types()
            .into_iter()
            .filter(|e| e.other(node_type).is_some())
            .collect()
    }

    pub fn h_enc_dim(&self) -> usize {
        self.ee_hidden + self.nhe_hidden
    }

    pub fn gmm_raw_dim(&self) -> usize {
        trajectron_nn::gmm::GMM_PARAMS_PER_COMPONENT * self.n_gmm_components
    }
}
