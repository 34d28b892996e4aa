//! Perturbed stochastic recursive gradient methods for finding approximate
//! local minima of smooth nonconvex stochastic objectives.
//!
//! The crate is organised around four pieces:
//!
//! - [`problems`]: the stochastic oracle contract ([`StochasticProblem`]) and
//!   the built-in instances (symmetric matrix sensing, a saddle quartic and
//!   finite sums of quadratics).
//! - [`estimators`]: the SPIDER/SARAH and STORM recursive gradient estimators.
//! - [`params`] and [`driver`]: hyperparameter derivation and the two-phase
//!   driver (normalized descent, perturbation, escape phase with last step
//!   shrinkage).
//! - [`certify`]: second-order certification from Hessian-vector products.
//!
//! Every run produces a step-by-step [`TraceRecord`] log which is the only
//! observable side channel of the optimizer.

pub mod certify;
pub mod driver;
pub mod error;
pub mod estimators;
pub mod params;
pub mod problems;
pub mod trace;

pub use certify::{certify, min_eigenvalue, smallest_eigenpair, Certificate, EigenEstimate};
pub use driver::{gd_step, lena_run, perturb, shrink_eta, RunOutcome, RunStatus, TraceOptions};
pub use error::{Error, Result};
pub use estimators::{
    estimator_error, Branch, EstimatorConfig, EstimatorKind, EstimatorState, EstimatorStep, Sampling,
};
pub use params::{derive_params, derive_schedule, HyperParams, ManualParams, ParamMode, ProblemInputs, Schedule};
pub use problems::{
    FiniteQuadratic, MatrixSensing, ProblemConstants, SaddleQuartic, Sample, StochasticProblem, Vector,
};
pub use trace::{Phase, TraceRecord};

/// Deterministic random stream used throughout the crate.
pub type Stream = rand_chacha::ChaCha8Rng;

/// Creates the deterministic stream for a seed.
pub fn stream(seed: u64) -> Stream {
    use rand::SeedableRng;
    Stream::seed_from_u64(seed)
}
