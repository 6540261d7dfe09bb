//! Configuration, dataset files and the experiment drivers behind the CLI.

mod config;
pub mod container;
mod dataset;
mod drivers;
mod sampling;
mod train;

pub use config::{OutputMapKind, RunConfig};
pub use dataset::{gen_data, generate, oracle_coefficients, reference_solutions, Dataset, DatasetHeader, Split, TEST_STREAM_OFFSET};
pub use sampling::{FieldGrid, SourceSampler, SourceSpline};
pub use train::{network_spec, train, with_threads, LossContext, LossRecord, RngState, TrainingState};
pub use drivers::{
    convergence, evaluate_coefficients, log_log_slope, oracle_report, profile_csv, read_config, run_convergence, run_eval, run_gen_data, run_oracle,
    run_reference, run_train, write_manifest, ConvergenceReport, ErrorNorm, Summary,
};
