//! Experiment harness for `stable-bilevel`: TOML configs, multi-seed runs,
//! CSV output, rate fits and the `stable-bench` command line.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod experiment;
pub mod slope;
pub mod verify;

pub use config::ExperimentConfig;
pub use experiment::{
    build_problem, run_experiment, run_experiment_in, BuiltProblem, ExperimentOutcome,
};
pub use slope::{cesaro, fit_rate_slope, read_column};
