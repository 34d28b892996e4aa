//! Experiment harness for the `lena` optimizers: TOML run configs, baseline
//! optimizers sharing the trace schema, parallel seeded trials with CSV traces
//! and JSON summaries, and plot emission.

pub mod baselines;
pub mod config;
pub mod error;
pub mod experiment;
pub mod plot;

pub use baselines::{baseline_run, BaselineKind, BaselineParams};
pub use config::{Algorithm, Overrides, ProblemSpec, RunConfig};
pub use error::{HarnessError, Result};
pub use experiment::{
    prepare, run_experiment, run_trial, Instance, Plan, Prepared, Summary, SummaryRecord, TrialStatus,
};
pub use plot::{emit_plot, Series};
