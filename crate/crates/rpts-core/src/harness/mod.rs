//! Reproducible experiment harness: configuration, seeded run execution,
//! aggregation, and file artifacts.
//!
//! An experiment is a TOML [`ExperimentConfig`]; [`run_experiment`] executes
//! its runs (in parallel when a rayon pool has workers to spare, with
//! identical results either way) and optionally writes a run directory that
//! the analysis entry points ([`survival_reports_for_run_dir`],
//! [`envelope_report`]) consume.

pub mod config;
pub mod io;
pub mod runner;

pub use config::{load_config, Algorithm, ExperimentConfig, RecordFlags};
pub use io::{
    load_particles_csv, read_recorded_runs, survival_reports_for_run_dir, write_envelope_csv,
    write_regret_csv, write_survival_csv, RecordedRun,
};
pub use runner::{
    aggregate, envelope_report, run_experiment, run_experiment_with_workers, run_single,
    survival_report, AggregateResult, BlockSnapshot, EnvelopeRow, ExperimentResult, RunArtifacts,
    WeightLog,
};
