//! Displacement metrics, KDE log-likelihood, bootstrap intervals, baselines,
//! the fold evaluation protocol and runtime benchmarks.

pub mod baselines;
pub mod bench;
pub mod bootstrap;
pub mod kde;
pub mod metrics;
pub mod protocol;

pub use bench::{crowd_scene, encode_speed, runtime_benchmark, BenchOptions, BenchRow, EncodeSpeed};
pub use bootstrap::bootstrap_ci;
pub use kde::{kde_nll, kde_nll_per_step, KdeModel};
pub use metrics::{ade, best_of_n, fde};
pub use protocol::{evaluate_fold, EvalOptions, MethodValues, MetricRow, MetricTable, NllRow};
