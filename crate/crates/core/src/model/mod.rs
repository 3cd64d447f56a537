//! The forecasting model: per-type history encoders, edge encoders with
//! modulation, edge-type attention, a discrete latent with prior and
//! recognition networks, and a mixture-density LSTM decoder over velocities.
//!
//! Tensors are named `{node_type}/{component}/{param}` for node bundles and
//! `{A-B}/edge_encoder/{param}` for edge bundles.

mod config;
mod decoder;
mod encoder;
mod frame;
mod online;
mod predict;
mod sample;

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trajectron_nn::checkpoint::{self, ContainerWriter};
use trajectron_nn::{Activation, AdditiveAttention, BiLstm, Linear, LstmCell, Mlp, ParamStore, Real, Tensor};

use crate::dataio::{Standardizer, STATE_DIM};
use crate::error::{CoreError, Result};
use crate::graph::EdgeType;

pub use config::ModelConfig;
pub use decoder::{integrate_velocities, teacher_forced_log_lik, DecoderContext};
pub use encoder::{encode_scene, EncoderStepper, TapedEncoding};
pub use frame::{scene_frames, EdgeInput, Frame, FrameAgent};
pub use online::{Observation, OnlinePredictor};
pub use predict::{
    argmax, predict, predict_frames, AgentPrediction, PredictOptions, PredictionBatch, SampleMode,
    TrajectorySample,
};
pub use sample::{extract_samples, AgentSample, BatchStep, SampleBatch};

/// Width of the decoder's previous-output input and of the future encoder input.
pub const VELOCITY_DIM: usize = 2;
/// Scale of the initial GMM projection; keeps initial log-scales near zero.
pub const GMM_INIT_GAIN: f64 = 0.1;
/// Bound of the initial attention vector.
pub const ATTENTION_V_SCALE: f64 = 0.1;

const STANDARDIZER_MEAN: &str = "standardizer/mean";
const STANDARDIZER_STD: &str = "standardizer/std";

/// Weights shared by every node of one type.
#[derive(Debug, Clone)]
pub struct NodeModules {
    pub history: LstmCell,
    pub future: BiLstm,
    pub attention: AdditiveAttention,
    pub prior: Mlp,
    pub posterior: Mlp,
    pub decoder: LstmCell,
    /// Maps `[z ; h_enc]` to the decoder's initial `[hidden ; cell]`, hidden
    /// through tanh.
    pub decoder_init: Linear,
    pub gmm: Linear,
    /// Edge types touching this node type, in attention order.
    pub edge_types: Vec<EdgeType>,
}

#[derive(Debug, Clone)]
pub struct Model<S: Real> {
    pub config: ModelConfig,
    pub params: ParamStore<S>,
    pub nodes: BTreeMap<String, NodeModules>,
    pub edges: BTreeMap<EdgeType, LstmCell>,
    pub standardizer: Standardizer,
}

impl<S: Real> Model<S> {
    /// Fresh weights: fan-in scaled uniform maps, LSTM forget bias 1, small
    /// attention vectors. Deterministic in `seed`.
    pub fn initialize(config: &ModelConfig, standardizer: Standardizer, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamStore::new();
        let mut node_types = config.node_types.clone();
        node_types.sort();
        let z = config.latent_cardinality;
        let h_enc = config.h_enc_dim();
        let mut nodes = BTreeMap::new();
        for nt in &node_types {
            let history = LstmCell::init(&mut ps, &mut rng, &format!("{nt}/history_encoder"), STATE_DIM, config.nhe_hidden);
            let future = BiLstm::init(&mut ps, &mut rng, &format!("{nt}/future_encoder"), VELOCITY_DIM, config.nfe_hidden);
            let attention = AdditiveAttention::init(
                &mut ps,
                &mut rng,
                &format!("{nt}/edge_attention"),
                config.ee_hidden,
                config.nhe_hidden,
                config.attention_hidden,
                ATTENTION_V_SCALE,
            );
            let prior = Mlp::init(
                &mut ps,
                &mut rng,
                &format!("{nt}/prior"),
                &[h_enc, config.latent_mlp_hidden, z],
                Activation::Tanh,
            );
            let posterior = Mlp::init(
                &mut ps,
                &mut rng,
                &format!("{nt}/posterior"),
                &[h_enc + future.out_dim(), config.latent_mlp_hidden, z],
                Activation::Tanh,
            );
            let decoder = LstmCell::init(
                &mut ps,
                &mut rng,
                &format!("{nt}/decoder/lstm"),
                VELOCITY_DIM + z + h_enc,
                config.decoder_hidden,
            );
            let decoder_init = Linear::init(
                &mut ps,
                &mut rng,
                &format!("{nt}/decoder/initial_state"),
                z + h_enc,
                2 * config.decoder_hidden,
                1.0,
            );
            let gmm = Linear::init(
                &mut ps,
                &mut rng,
                &format!("{nt}/decoder/gmm"),
                config.decoder_hidden,
                config.gmm_raw_dim(),
                GMM_INIT_GAIN,
            );
            nodes.insert(
                nt.clone(),
                NodeModules {
                    history,
                    future,
                    attention,
                    prior,
                    posterior,
                    decoder,
                    decoder_init,
                    gmm,
                    edge_types: config.edge_types_of(nt),
                },
            );
        }
        let mut edges = BTreeMap::new();
        for et in config.edge_types() {
            let cell = LstmCell::init(&mut ps, &mut rng, &format!("{et}/edge_encoder"), 2 * STATE_DIM, config.ee_hidden);
            edges.insert(et, cell);
        }
        Ok(Model {
            config: config.clone(),
            params: ps,
            nodes,
            edges,
            standardizer,
        })
    }

    pub fn node(&self, node_type: &str) -> Result<&NodeModules> {
        self.nodes
            .get(node_type)
            .ok_or_else(|| CoreError::config(format!("unknown node type {node_type:?}")))
    }

    pub fn edge(&self, et: &EdgeType) -> Result<&LstmCell> {
        self.edges
            .get(et)
            .ok_or_else(|| CoreError::config(format!("unknown edge type {et}")))
    }

    /// Bi-directional summary of a ground-truth future, one `[rows, 2]`
    /// velocity tensor per step. Only defined for a complete horizon.
    pub fn encode_future(&self, node_type: &str, future: &[Tensor<S>]) -> Result<Tensor<S>> {
        if future.len() != self.config.horizon {
            return Err(CoreError::Contract(format!(
                "future encoding needs {} ground-truth steps, got {}",
                self.config.horizon,
                future.len()
            )));
        }
        Ok(self.node(node_type)?.future.encode(&self.params, future)?)
    }

    /// Prior logits, and recognition logits when a future summary is given.
    pub fn latent_logits(
        &self,
        node_type: &str,
        h_enc: &Tensor<S>,
        h_future: Option<&Tensor<S>>,
    ) -> Result<(Tensor<S>, Option<Tensor<S>>)> {
        let node = self.node(node_type)?;
        let prior = node.prior.forward(&self.params, h_enc)?;
        let posterior = match h_future {
            Some(f) => Some(node.posterior.forward(&self.params, &Tensor::concat_cols(&[h_enc, f])?)?),
            None => None,
        };
        Ok((prior, posterior))
    }

    /// Container bytes: every parameter in `S`, then the standardizer in f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ContainerWriter::new();
        for (name, t) in self.params.iter() {
            w.push(name, t);
        }
        w.push(STANDARDIZER_MEAN, &Tensor::<f64>::row(&self.standardizer.mean));
        w.push(STANDARDIZER_STD, &Tensor::<f64>::row(&self.standardizer.std));
        w.finish()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    /// Rebuilds the model for `config` and fills it from container bytes.
    /// Missing, misshapen or unexpected tensors are errors.
    pub fn from_bytes(config: &ModelConfig, bytes: &[u8]) -> Result<Self> {
        let stored = checkpoint::decode(bytes)?;
        let mut model = Model::initialize(config, Standardizer::identity(), 0)?;
        model.params.load_from(&stored)?;
        for (name, _) in &stored {
            let known = model.params.id(name).is_some() || name == STANDARDIZER_MEAN || name == STANDARDIZER_STD;
            if !known {
                return Err(CoreError::config(format!(
                    "checkpoint tensor {name} does not belong to this model configuration"
                )));
            }
        }
        let stat = |name: &str| -> Result<[f64; STATE_DIM]> {
            let t = stored
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.to_tensor::<f64>())
                .ok_or_else(|| CoreError::config(format!("checkpoint lacks {name}")))?;
            t.data()
                .try_into()
                .map_err(|_| CoreError::config(format!("{name} must hold {STATE_DIM} values")))
        };
        model.standardizer = Standardizer::from_stats(stat(STANDARDIZER_MEAN)?, stat(STANDARDIZER_STD)?);
        Ok(model)
    }

    pub fn load(config: &ModelConfig, path: impl AsRef<Path>) -> Result<Self> {
        Model::from_bytes(config, &std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_type_config() -> ModelConfig {
        ModelConfig {
            node_types: vec!["PEDESTRIAN".into(), "BIKE".into()],
            ..ModelConfig::default()
        }
    }

    #[test]
    fn same_seed_same_weights() {
        let c = ModelConfig::default();
        let a = Model::<f64>::initialize(&c, Standardizer::identity(), 3).unwrap();
        let b = Model::<f64>::initialize(&c, Standardizer::identity(), 3).unwrap();
        assert_eq!(a.params.flatten(), b.params.flatten());
        let d = Model::<f64>::initialize(&c, Standardizer::identity(), 4).unwrap();
        assert_ne!(a.params.flatten(), d.params.flatten());
    }

    #[test]
    fn one_bundle_per_type() {
        let m = Model::<f64>::initialize(&two_type_config(), Standardizer::identity(), 0).unwrap();
        assert_eq!(m.nodes.len(), 2);
        assert_eq!(m.edges.len(), 3);
        let a = m.params.by_name("BIKE/history_encoder/w").unwrap();
        let b = m.params.by_name("PEDESTRIAN/history_encoder/w").unwrap();
        assert_eq!(a.shape(), b.shape());
        assert_ne!(a.data(), b.data());
        assert!(m.params.by_name("BIKE-PEDESTRIAN/edge_encoder/w").is_some());
        assert_eq!(m.nodes["BIKE"].edge_types.len(), 2);
    }

    #[test]
    fn forget_bias_is_one() {
        let m = Model::<f64>::initialize(&ModelConfig::default(), Standardizer::identity(), 0).unwrap();
        for (name, t) in m.params.iter() {
            let is_lstm_bias = name.ends_with("/b")
                && (name.contains("encoder") || name.contains("decoder/lstm"));
            if is_lstm_bias {
                let h = t.cols() / 4;
                assert!(t.data()[h..2 * h].iter().all(|&v| v == 1.0), "{name}");
                assert!(t.data()[..h].iter().all(|&v| v == 0.0), "{name}");
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_and_config_mismatch() {
        let c = ModelConfig::default();
        let std = Standardizer::from_stats([1.0, 2.0, 0.1, 0.2, 0.0, 0.0], [2.0, 3.0, 1.0, 1.0, 0.5, 0.5]);
        let m = Model::<f32>::initialize(&c, std, 9).unwrap();
        let bytes = m.to_bytes();
        let back = Model::<f32>::from_bytes(&c, &bytes).unwrap();
        assert_eq!(back.params.flatten(), m.params.flatten());
        assert_eq!(back.standardizer, m.standardizer);
        let wide = Model::<f64>::from_bytes(&c, &bytes).unwrap();
        assert_eq!(wide.params.num_scalars(), m.params.num_scalars());
        let other = ModelConfig {
            latent_cardinality: 4,
            ..c.clone()
        };
        assert!(Model::<f32>::from_bytes(&other, &bytes).is_err());
        assert!(Model::<f32>::from_bytes(&two_type_config(), &bytes).is_err());
    }
}
