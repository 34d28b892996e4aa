//! Stochastic oracle contract and built-in problem instances.
//!
//! An instance models `F(x) = E_ξ[f(x; ξ)]`. Optimizers only see stochastic
//! gradients `∇f(x; ξ)`, and the two-point query [`StochasticProblem::stoch_grad_pair`]
//! evaluates two points under the same [`Sample`]. Full values, gradients
//! and Hessian-vector products are exposed for finite-sum and deterministic
//! instances so runs can be logged and certified.

mod matrix_sensing;
mod quadratic;
mod quartic;

pub use matrix_sensing::MatrixSensing;
pub use quadratic::FiniteQuadratic;
pub use quartic::SaddleQuartic;

use nalgebra::DVector;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub type Vector = DVector<f64>;

/// Randomness handle for one stochastic gradient evaluation.
///
/// Applying the same sample at two points reuses identical randomness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Sample {
    /// Noiseless instance: every gradient equals the full gradient.
    Exact,
    /// Component index of a finite sum.
    Component(usize),
}

/// Regularity constants of an instance.
///
/// For instances whose constants are unbounded globally these are effective
/// values over the operating domain reported by the instance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    /// Gradient Lipschitz constant `L` of every component.
    pub smoothness: f64,
    /// Hessian Lipschitz constant `ρ` of every component.
    pub hessian_lipschitz: f64,
    /// Uniform bound `σ` on `‖∇f(x; ξ) − ∇F(x)‖`.
    pub noise_bound: f64,
}

pub trait StochasticProblem: Send + Sync {
    fn dim(&self) -> usize;

    fn constants(&self) -> ProblemConstants;

    /// Number of components for finite-sum instances, `None` when noiseless.
    fn num_components(&self) -> Option<usize>;

    /// Draws one sample; finite sums draw a uniform component index.
    fn draw_sample(&self, rng: &mut dyn RngCore) -> Sample {
        match self.num_components() {
            Some(n) => Sample::Component(rng.random_range(0..n)),
            None => Sample::Exact,
        }
    }

    /// `∇f(x; s)`.
    fn stoch_grad(&self, x: &Vector, s: Sample) -> Result<Vector>;

    /// `(∇f(x_new; s), ∇f(x_old; s))` under the same randomness.
    fn stoch_grad_pair(&self, x_new: &Vector, x_old: &Vector, s: Sample) -> Result<(Vector, Vector)> {
        Ok((self.stoch_grad(x_new, s)?, self.stoch_grad(x_old, s)?))
    }

    fn full_gradient(&self, _x: &Vector) -> Result<Vector> {
        Err(Error::Unsupported("full gradient"))
    }

    fn full_value(&self, _x: &Vector) -> Result<f64> {
        Err(Error::Unsupported("full objective value"))
    }

    /// `∇²F(x) v`.
    fn hessian_apply(&self, _x: &Vector, _v: &Vector) -> Result<Vector> {
        Err(Error::Unsupported("Hessian-vector product"))
    }

    /// Finite-difference step used by [`hessian_apply`](Self::hessian_apply)
    /// at `x`, or `None` when the product is analytic.
    fn hessian_fd_step(&self, _x: &Vector) -> Option<f64> {
        None
    }

    /// `inf_x F(x)` when known in closed form.
    fn infimum(&self) -> Option<f64> {
        None
    }
}

/// Averages the stochastic gradients of `samples` at `x`, in order.
pub fn mean_gradient(problem: &dyn StochasticProblem, x: &Vector, samples: &[Sample]) -> Result<Vector> {
    check_dim(problem.dim(), x.len())?;
    let mut acc = Vector::zeros(problem.dim());
    for &s in samples {
        acc += problem.stoch_grad(x, s)?;
    }
    if !samples.is_empty() {
        acc /= samples.len() as f64;
    }
    Ok(acc)
}

/// Exact full gradient of a finite sum as the mean over every component.
pub fn component_mean(problem: &dyn StochasticProblem, x: &Vector) -> Result<Vector> {
    match problem.num_components() {
        Some(n) => {
            let all: Vec<Sample> = (0..n).map(Sample::Component).collect();
            mean_gradient(problem, x, &all)
        }
        None => problem.stoch_grad(x, Sample::Exact),
    }
}

/// Symmetric finite-difference Hessian-vector product of `full_gradient`.
///
/// The step is `h = 1e-5 · max(1, ‖x‖)` along the unit direction of `v`.
pub fn fd_hessian_apply(problem: &dyn StochasticProblem, x: &Vector, v: &Vector) -> Result<Vector> {
    check_dim(problem.dim(), x.len())?;
    check_dim(problem.dim(), v.len())?;
    let scale = v.norm();
    if scale == 0.0 {
        return Ok(Vector::zeros(v.len()));
    }
    let h = fd_step(x);
    let dir = v / scale;
    let plus = problem.full_gradient(&(x + &dir * h))?;
    let minus = problem.full_gradient(&(x - &dir * h))?;
    Ok((plus - minus) * (scale / (2.0 * h)))
}

/// Finite-difference step used by [`fd_hessian_apply`].
pub fn fd_step(x: &Vector) -> f64 {
    1e-5 * x.norm().max(1.0)
}

/// Uniform draw from the solid ball of `radius` centred at the origin.
pub fn uniform_ball(dim: usize, radius: f64, rng: &mut dyn RngCore) -> Vector {
    use rand_distr::{Distribution, StandardNormal};
    let mut g = Vector::from_iterator(dim, (0..dim).map(|_| StandardNormal.sample(&mut *rng)));
    let norm = g.norm();
    let u: f64 = rng.random();
    if norm == 0.0 {
        return Vector::zeros(dim);
    }
    g *= radius * u.powf(1.0 / dim as f64) / norm;
    g
}
