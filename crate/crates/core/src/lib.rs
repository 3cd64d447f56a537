pub mod dataio;
pub mod error;
pub mod eval;
pub mod graph;
pub mod kv;
pub mod model;
pub mod train;

pub use error::{CoreError, Result};
