//! The two-phase driver.
//!
//! Each epoch runs normalized descent while the estimate is larger than `ε`,
//! then perturbs and runs up to `t_thres` escape steps of size `η_H`. The
//! escape phase tracks `D = Σ η_i² ‖d_i‖²` over the post-perturbation steps;
//! the first step that would push `D` past `k·D̄` is shrunk so that
//! `D = k·D̄` exactly, after which the epoch ends and a new one starts from
//! there. An escape phase that completes all `t_thres` steps ends the run and
//! returns the point where the perturbation was applied.
//!
//! Counter convention: the estimator counter equals the index of the iterate
//! the estimate refers to. The initial big batch is the estimate for `x_1`
//! and the estimate produced after an epoch-ending shrunk step is carried
//! into the next epoch's descent gate.

use rand::RngCore;

use crate::certify::Certificate;
use crate::error::{check_dim, Error, Result};
use crate::estimators::{estimator_error, EstimatorState};
use crate::params::HyperParams;
use crate::problems::{uniform_ball, StochasticProblem, Vector};
use crate::trace::{Phase, TraceRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunStatus {
    Converged,
    BudgetExhausted,
}

/// What to record besides the always-present movement columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceOptions {
    /// Record `F` and `‖∇F‖` every `log_every` steps and at phase
    /// boundaries; 0 disables them.
    pub log_every: u64,
    /// Record `‖d_t − ∇F(x_t)‖` on every row.
    pub estimator_error: bool,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self { log_every: 10, estimator_error: false }
    }
}

impl TraceOptions {
    pub fn movement_only() -> Self {
        Self { log_every: 0, estimator_error: false }
    }

    pub fn every_step() -> Self {
        Self { log_every: 1, estimator_error: true }
    }

    /// `(F(x), ‖∇F(x)‖)` if this row is due; unsupported oracles give `None`.
    pub fn observe(
        &self,
        problem: &dyn StochasticProblem,
        x: &Vector,
        step: u64,
        boundary: bool,
    ) -> Result<(Option<f64>, Option<f64>)> {
        if self.log_every == 0 || !(boundary || step.is_multiple_of(self.log_every)) {
            return Ok((None, None));
        }
        Ok((optional(problem.full_value(x))?, optional(problem.full_gradient(x).map(|g| g.norm()))?))
    }
}

fn optional<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Unsupported(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub x_out: Vector,
    pub status: RunStatus,
    pub trace: Vec<TraceRecord>,
    pub certificate: Option<Certificate>,
    pub sgrad_evals: u64,
    /// Last iterate reached, which differs from `x_out` after an escape.
    pub last_iterate: Vector,
}

/// `x − (η/‖d‖)·d`.
pub fn gd_step(x: &Vector, d: &Vector, eta: f64) -> Result<Vector> {
    check_dim(x.len(), d.len())?;
    let norm = d.norm();
    if norm == 0.0 {
        return Err(Error::ZeroDirection);
    }
    Ok(x - d * (eta / norm))
}

/// `x + ξ` with `ξ` uniform in the solid ball of radius `r`.
pub fn perturb(x: &Vector, r: f64, rng: &mut dyn RngCore) -> Vector {
    x + uniform_ball(x.len(), r, rng)
}

/// Escape-phase step size for the `k`-th post-perturbation step.
///
/// Returns `(η_t, triggered)`. With `D = sum_prev + η_H²‖d‖²`, a step is
/// shrunk exactly when `D > k·D̄`, to `η_t = √(k·D̄ − sum_prev)/‖d‖`.
pub fn shrink_eta(sum_prev: f64, k: usize, dbar: f64, d_norm: f64, eta_h: f64) -> Result<(f64, bool)> {
    let allowed = k as f64 * dbar;
    let room = allowed - sum_prev;
    if room < 0.0 {
        return Err(Error::ShrinkInvariant { allowed, accumulated: sum_prev });
    }
    if d_norm == 0.0 {
        return Ok((eta_h, false));
    }
    let candidate = sum_prev + eta_h * eta_h * d_norm * d_norm;
    if candidate > allowed {
        Ok((room.sqrt() / d_norm, true))
    } else {
        Ok((eta_h, false))
    }
}

struct Recorder<'a> {
    problem: &'a dyn StochasticProblem,
    params: &'a HyperParams,
    opts: &'a TraceOptions,
    trace: Vec<TraceRecord>,
}

struct Row {
    step: u64,
    epoch: u64,
    phase: Phase,
    evals: u64,
    eta_used: f64,
    d_norm: f64,
    step_norm: f64,
    movement: f64,
    triggered: bool,
    boundary: bool,
}

impl Recorder<'_> {
    fn push(&mut self, row: Row, x: &Vector, est: &EstimatorState) -> Result<()> {
        let (f_full, grad_norm_full) = self.opts.observe(self.problem, x, row.step, row.boundary)?;
        let err = if self.opts.estimator_error { optional(estimator_error(est, self.problem, x))? } else { None };
        self.trace.push(TraceRecord {
            step: row.step,
            epoch: row.epoch,
            phase: row.phase,
            sgrad_evals_cum: row.evals,
            eta_used: row.eta_used,
            d_norm: row.d_norm,
            step_norm: row.step_norm,
            movement_sq_cum: row.movement,
            shrink_triggered: row.triggered as u8,
            f_full,
            grad_norm_full,
            estimator_error: err,
            mode: self.params.mode,
        });
        Ok(())
    }
}

/// Runs the perturbed recursive-gradient method from `x1`.
///
/// No oracle call is made that would take the evaluation count past
/// `params.budget`; when the next call does not fit the run stops with
/// [`RunStatus::BudgetExhausted`] and returns the last perturbation anchor,
/// or the latest iterate if no perturbation happened yet.
pub fn lena_run(
    problem: &dyn StochasticProblem,
    params: &HyperParams,
    x1: &Vector,
    rng: &mut dyn RngCore,
    opts: &TraceOptions,
) -> Result<RunOutcome> {
    params.validate()?;
    check_dim(problem.dim(), x1.len())?;
    let config = params.estimator_config();
    let mut rec = Recorder { problem, params, opts, trace: Vec::new() };

    let exhausted = |rec: Recorder, anchor: Option<Vector>, x: Vector, evals: u64| RunOutcome {
        x_out: anchor.unwrap_or_else(|| x.clone()),
        status: RunStatus::BudgetExhausted,
        trace: rec.trace,
        certificate: None,
        sgrad_evals: evals,
        last_iterate: x,
    };

    if (config.big_batch as u64) > params.budget {
        return Ok(exhausted(rec, None, x1.clone(), 0));
    }
    let (mut est, first) = EstimatorState::init(config, x1, problem, rng)?;
    let mut evals = first.evals;
    let mut x = x1.clone();
    let mut t: u64 = 0;
    rec.push(
        Row {
            step: t,
            epoch: 0,
            phase: Phase::Init,
            evals,
            eta_used: 0.0,
            d_norm: est.estimate().norm(),
            step_norm: 0.0,
            movement: 0.0,
            triggered: false,
            boundary: true,
        },
        &x,
        &est,
    )?;

    let fits = |evals: u64, est: &EstimatorState| evals.saturating_add(est.next_cost()) <= params.budget;
    let mut anchor: Option<Vector> = None;
    let mut epoch: u64 = 0;
    loop {
        epoch += 1;

        while est.estimate().norm() > params.eps {
            if !fits(evals, &est) {
                return Ok(exhausted(rec, anchor, x, evals));
            }
            let d_norm = est.estimate().norm();
            let x_new = gd_step(&x, est.estimate(), params.eta)?;
            evals += est.update(&x_new, &x, problem, rng)?.evals;
            let step_norm = (&x_new - &x).norm();
            x = x_new;
            t += 1;
            let boundary = est.estimate().norm() <= params.eps;
            rec.push(
                Row {
                    step: t,
                    epoch,
                    phase: Phase::Gd,
                    evals,
                    eta_used: params.eta / d_norm,
                    d_norm,
                    step_norm,
                    movement: 0.0,
                    triggered: false,
                    boundary,
                },
                &x,
                &est,
            )?;
        }

        if !fits(evals, &est) {
            return Ok(exhausted(rec, anchor, x, evals));
        }
        let d_norm = est.estimate().norm();
        let x_anchor = x.clone();
        let x_new = perturb(&x, params.radius, rng);
        evals += est.update(&x_new, &x, problem, rng)?.evals;
        let step_norm = (&x_new - &x).norm();
        anchor = Some(x_anchor);
        x = x_new;
        t += 1;
        rec.push(
            Row {
                step: t,
                epoch,
                phase: Phase::Perturb,
                evals,
                eta_used: 0.0,
                d_norm,
                step_norm,
                movement: 0.0,
                triggered: false,
                boundary: true,
            },
            &x,
            &est,
        )?;

        let mut movement = 0.0;
        let mut escaped = false;
        for k in 1..=params.t_thres {
            if !fits(evals, &est) {
                return Ok(exhausted(rec, anchor, x, evals));
            }
            let d_norm = est.estimate().norm();
            let (eta_t, triggered) = shrink_eta(movement, k, params.dbar, d_norm, params.eta_h)?;
            let x_new = &x - est.estimate() * eta_t;
            movement += eta_t * eta_t * d_norm * d_norm;
            evals += est.update(&x_new, &x, problem, rng)?.evals;
            let step_norm = (&x_new - &x).norm();
            x = x_new;
            t += 1;
            rec.push(
                Row {
                    step: t,
                    epoch,
                    phase: Phase::Escape,
                    evals,
                    eta_used: eta_t,
                    d_norm,
                    step_norm,
                    movement,
                    triggered,
                    boundary: triggered || k == params.t_thres,
                },
                &x,
                &est,
            )?;
            if triggered {
                escaped = true;
                break;
            }
        }

        if !escaped {
            let x_out = anchor.expect("anchor is set before the escape phase");
            return Ok(RunOutcome {
                x_out,
                status: RunStatus::Converged,
                trace: rec.trace,
                certificate: None,
                sgrad_evals: evals,
                last_iterate: x,
            });
        }
    }
}
