//! Training, evaluation, ablation and the command-line front end.

pub mod ablate;
pub mod cli;
pub mod evaluate;
pub mod gradcheck;
pub mod metrics;
pub mod optimizer;
pub mod train;

pub use ablate::{ablate, variants, AblationRow, Axis, Variant};
pub use evaluate::evaluate;
pub use metrics::MetricsReport;
pub use optimizer::{Optimizer, OptimizerKind};
pub use train::{run, train, EpochLog, RunOutcome, TrainConfig, TrainOutcome};
