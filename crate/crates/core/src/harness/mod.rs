//! Configuration, orchestration, comparison reports and trace output.

pub mod config;
pub mod experiment;
pub mod report;
pub mod trace;

pub use config::{CircuitSpec, DatasetSpec, ExperimentConfig, SweepSpec, CONFIG_ENV};
pub use experiment::{
    run_dataset, run_experiment, run_tier, sweep, write_experiment, write_runs, write_sweep, ExperimentResult,
    RunOutcome, SweepCell, SweepResult, TierFailure, TierSummary,
};
pub use report::{bits_of_precision, compare, precision, ComparisonReport, Precision, FULL_SCALE};
pub use trace::{csv_to_gnuplot, write_atomic, CircuitSnapshot, Tier, TrainTrace, FORMAT_VERSION};
