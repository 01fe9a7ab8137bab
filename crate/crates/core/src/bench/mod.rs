//! Benchmark harness: run configs, the training loop with early stopping,
//! the experiment drivers and the report writers.

mod config;
mod experiments;
mod report;
mod train;

pub use config::{RunConfig, DEFAULT_LAMBDA};
pub use experiments::{
    adaptation_sweep, grid_search, init_ablation, sample_candidates, select_best, stress_test, transfer_experiment,
    transfer_label, GridCandidate, GridResult, GridSpec,
};
pub use report::{emit_report, Report, ResultRow, ResultTable};
pub use train::{
    checkpoint_name, init_model, train, training_batch, CurvePoint, RunRecord, RunStatus, TrainOutcome, Workspace,
};
