//! Numeric core for the trajectron workspace: dense tensors, a reverse-mode
//! tape, LSTM / attention / MLP layers, bivariate Gaussian mixtures and the
//! named-tensor checkpoint container.

pub mod checkpoint;
pub mod error;
pub mod gmm;
pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod real;
pub mod tape;
pub mod tensor;

pub use error::{NnError, Result};
pub use gmm::{gmm_log_prob, gmm_sample, GmmParams};
pub use layers::{
    attention_score, mlp, softmax, Activation, AdditiveAttention, BiLstm, Linear, LstmCell,
    LstmState, Mlp, TapedLstm,
};
pub use params::{ParamId, ParamStore};
pub use real::{DType, Real};
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;
