//! Second-order certification from Hessian-vector products.
//!
//! The smallest eigenvalue comes from power iteration on `s·I − H`. The
//! shift `s` is 1.1 times a power-iteration estimate of `‖H‖₂` rather than a
//! global smoothness bound, which for matrix sensing is orders of magnitude
//! larger than the local curvature and would stall the iteration. If the
//! estimate turns out too small (the dominant eigenvalue of `s·I − H` is
//! negative) the shift is doubled and the iteration restarted.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::problems::{StochasticProblem, Vector};

/// Default iteration cap per attempt.
pub const DEFAULT_MAX_ITER: usize = 20_000;
/// Default relative residual tolerance.
pub const DEFAULT_TOL: f64 = 1e-7;

const RESTARTS: usize = 3;
const NORM_PROBE_ITERS: usize = 60;
const SHIFT_MARGIN: f64 = 1.1;

#[derive(Clone, Debug, PartialEq)]
pub struct EigenEstimate {
    pub value: f64,
    pub vector: Vector,
    /// `‖Hv − λv‖`.
    pub residual: f64,
    pub iterations: usize,
    pub shift: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub grad_norm: f64,
    pub min_eig: f64,
    pub eps: f64,
    pub eps_h: f64,
    pub pass: bool,
    pub iterations_used: usize,
    pub residual: f64,
    /// Slack granted to the curvature test.
    pub tolerance: f64,
    pub eigenvector: Vec<f64>,
}

impl Certificate {
    pub fn gradient_ok(&self) -> bool {
        self.grad_norm <= self.eps
    }

    pub fn curvature_ok(&self) -> bool {
        self.min_eig >= -self.eps_h - self.tolerance
    }
}

fn random_unit(dim: usize, rng: &mut dyn RngCore) -> Vector {
    loop {
        let g = Vector::from_iterator(dim, (0..dim).map(|_| StandardNormal.sample(&mut *rng)));
        let n = g.norm();
        if n > 0.0 {
            return g / n;
        }
    }
}

fn norm_estimate<F>(dim: usize, apply: &mut F, rng: &mut dyn RngCore) -> Result<f64>
where
    F: FnMut(&Vector) -> Result<Vector>,
{
    let mut v = random_unit(dim, rng);
    let mut est = 0.0_f64;
    for _ in 0..NORM_PROBE_ITERS {
        let w = apply(&v)?;
        let n = w.norm();
        est = est.max(n);
        if n == 0.0 {
            break;
        }
        v = w / n;
    }
    Ok(est)
}

/// Smallest eigenpair of the symmetric operator `apply` on `ℝ^dim`.
///
/// Converged when `‖Hv − λv‖ ≤ tol·s`.
pub fn smallest_eigenpair<F>(
    dim: usize,
    mut apply: F,
    tol: f64,
    max_iter: usize,
    rng: &mut dyn RngCore,
) -> Result<EigenEstimate>
where
    F: FnMut(&Vector) -> Result<Vector>,
{
    if !(tol > 0.0) || dim == 0 || max_iter == 0 {
        return Err(Error::InvalidParameter("eigen solve needs tol > 0, dim > 0 and max_iter > 0".into()));
    }
    let radius = norm_estimate(dim, &mut apply, rng)?;
    let mut shift = if radius > 0.0 { SHIFT_MARGIN * radius } else { 1.0 };
    let mut best: Option<EigenEstimate> = None;
    let mut attempt = 0;
    let mut total = 0;
    while attempt <= RESTARTS {
        let mut v = random_unit(dim, rng);
        let mut grew = false;
        for it in 1..=max_iter {
            total += 1;
            let hv = apply(&v)?;
            check_dim(dim, hv.len())?;
            let lambda = v.dot(&hv);
            let residual = (&hv - &v * lambda).norm();
            if lambda > shift {
                shift = 2.0 * lambda.abs().max(shift);
                grew = true;
                break;
            }
            let current = EigenEstimate { value: lambda, vector: v.clone(), residual, iterations: it, shift };
            if residual <= tol * shift {
                return Ok(EigenEstimate { iterations: total, ..current });
            }
            if best.as_ref().is_none_or(|b| residual < b.residual) {
                best = Some(current);
            }
            let w = &v * shift - hv;
            let n = w.norm();
            if n == 0.0 {
                break;
            }
            v = w / n;
        }
        if !grew {
            attempt += 1;
        }
    }
    let best = best.expect("at least one iteration ran");
    Err(Error::EigenNotConverged {
        eigenvalue: best.value,
        residual: best.residual,
        tolerance: tol * best.shift,
        iterations: total,
    })
}

/// Smallest eigenpair of `∇²F(x)`.
pub fn min_eigenvalue(
    problem: &dyn StochasticProblem,
    x: &Vector,
    tol: f64,
    max_iter: usize,
    rng: &mut dyn RngCore,
) -> Result<EigenEstimate> {
    check_dim(problem.dim(), x.len())?;
    smallest_eigenpair(problem.dim(), |v| problem.hessian_apply(x, v), tol, max_iter, rng)
}

/// Checks `‖∇F(x)‖ ≤ ε` and `λ_min(∇²F(x)) ≥ −ε_H − tolerance`.
///
/// The tolerance is `max(tol·s, 10·h·ρ)` where `s` is the solver shift and
/// `h` the finite-difference step when the Hessian is not analytic.
pub fn certify(problem: &dyn StochasticProblem, x: &Vector, eps: f64, eps_h: f64, tol: f64) -> Result<Certificate> {
    let grad_norm = problem.full_gradient(x)?.norm();
    let mut rng = crate::stream(0x5eed_ce27);
    let eig = min_eigenvalue(problem, x, tol, DEFAULT_MAX_ITER, &mut rng)?;
    let fd_floor = problem.hessian_fd_step(x).map_or(0.0, |h| 10.0 * h * problem.constants().hessian_lipschitz);
    let tolerance = (tol * eig.shift).max(fd_floor);
    let min_eig = eig.value;
    Ok(Certificate {
        grad_norm,
        min_eig,
        eps,
        eps_h,
        pass: grad_norm <= eps && min_eig >= -eps_h - tolerance,
        iterations_used: eig.iterations,
        residual: eig.residual,
        tolerance,
        eigenvector: eig.vector.iter().copied().collect(),
    })
}
