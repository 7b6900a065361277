//! Experiment configuration, replicated runs, checkpoints, and plot data.

mod checkpoint;
mod config;
mod experiment;
mod plots;
mod suite;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, DatasetInfo, CHECKPOINT_VERSION,
};
pub use config::{load_experiments, EvalMethod, ExperimentMatrix, ExperimentSpec, LossWeights};
pub use experiment::{
    derive_seed, evaluate_replicate, run_experiment, train_replicate, write_results_csv, ExperimentReport,
    ReplicateOutcome, ReplicateSeeds, ResultRow, RESULTS_HEADER,
};
pub use plots::{
    emit_quiver_data, emit_regression_data, mean_abs_cos, write_quiver_csv, write_regression_csv, QuiverRow,
    RegressionPlotRow,
};
pub use suite::{ablation_specs, cell_name, lambda2_study, table_cells, benchmark_suite, Cell};
