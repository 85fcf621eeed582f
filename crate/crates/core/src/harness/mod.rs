//! Deterministic experiment runner: data, training, the σ × repeat sweep,
//! metrics and figure-data files.

mod config;
mod run;
mod seed;

pub use config::ExperimentConfig;
pub use run::{
    argmin, cell_seed, day_seed, load_series, predict_grid, prepare_data, reference_sigma_index, run_experiment,
    run_experiment_with, sha256_hex, threads_from_env, RunChecks, RunManifest, SigmaBands, Timings, FIG6_HEADER,
    FIG7_HEADER, FIG8_HEADER, FIG9_HEADER, THREADS_ENV, TRACE_HEADER,
};
pub use seed::{derive_seed, Label};
