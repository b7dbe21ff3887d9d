//! Experiment orchestration: full probes, the K sweep, the N × K grid, and
//! their result files.

mod config;
mod experiments;
mod pipeline;
mod report;
mod tools;

pub use config::{
    Embedding, ExperimentConfig, Mode, Normalization, DEFAULT_K_LIST, DEFAULT_N_LIST, SWEEP_MAX_N,
};
pub use experiments::{
    mode_n_list, run_cells, run_full, run_grid, run_sweep, train_full, FullOutcome, GridResult,
    GridRow,
};
pub use pipeline::{aggregate_source, prepare, PreparedData};
pub use report::{emit_report, mean_std, ReportKind};
pub use tools::{aggregate_file, aggregate_manifest, synth, validate_path};
