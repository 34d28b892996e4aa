//! Baseline optimizers emitting the same trace schema as the perturbed driver.
//!
//! - SGD: `x ← x − η·mean_b ∇f(x; ξ)`.
//! - Perturbed SGD: SGD plus a uniform ball perturbation of radius `r` after
//!   every `period` SGD steps. This is the simple fixed-schedule recipe, an
//!   approximation of the original perturbed SGD schedule.
//! - Plain SPIDER: normalized steps `x ← x − η d/‖d‖` driven by the SPIDER
//!   estimator, without perturbation or escape phase.
//!
//! SGD carries no estimate past a step, so its rows leave `estimator_error`
//! empty.
//!
//! SGD variants stop when the minibatch gradient norm drops to `tolerance`,
//! plain SPIDER when the estimate does; all of them stop when the next oracle
//! call would exceed the budget.

use lena::problems::{mean_gradient, uniform_ball};
use lena::{
    gd_step, EstimatorConfig, EstimatorState, ParamMode, Phase, RunOutcome, RunStatus, Sample, StochasticProblem,
    TraceOptions, TraceRecord, Vector,
};
use rand::RngCore;

/// Default steps between perturbations of perturbed SGD.
pub const DEFAULT_PERIOD: u64 = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineKind {
    Sgd,
    PerturbedSgd,
    PlainSpider,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselineParams {
    pub kind: BaselineKind,
    /// Step size (SGD) or movement per step (plain SPIDER).
    pub eta: f64,
    pub mini_batch: usize,
    pub big_batch: usize,
    pub loop_len: usize,
    pub radius: f64,
    pub period: u64,
    pub tolerance: f64,
    pub budget: u64,
}

impl BaselineParams {
    pub fn sgd(eta: f64, mini_batch: usize, tolerance: f64, budget: u64) -> Self {
        Self {
            kind: BaselineKind::Sgd,
            eta,
            mini_batch,
            big_batch: 0,
            loop_len: 1,
            radius: 0.0,
            period: DEFAULT_PERIOD,
            tolerance,
            budget,
        }
    }

    pub fn perturbed_sgd(eta: f64, mini_batch: usize, radius: f64, period: u64, tolerance: f64, budget: u64) -> Self {
        Self { kind: BaselineKind::PerturbedSgd, radius, period, ..Self::sgd(eta, mini_batch, tolerance, budget) }
    }

    pub fn plain_spider(
        eta: f64,
        big_batch: usize,
        mini_batch: usize,
        loop_len: usize,
        tolerance: f64,
        budget: u64,
    ) -> Self {
        Self { kind: BaselineKind::PlainSpider, big_batch, loop_len, ..Self::sgd(eta, mini_batch, tolerance, budget) }
    }

    fn validate(&self) -> lena::Result<()> {
        let bad = |m: &str| Err(lena::Error::InvalidParameter(m.to_string()));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("baseline step size must be positive");
        }
        if self.mini_batch == 0 {
            return bad("baseline mini batch must be positive");
        }
        if self.kind == BaselineKind::PerturbedSgd && (self.period == 0 || !(self.radius >= 0.0)) {
            return bad("perturbed SGD needs a positive period and a nonnegative radius");
        }
        Ok(())
    }
}

struct Rows<'a> {
    problem: &'a dyn StochasticProblem,
    opts: &'a TraceOptions,
    trace: Vec<TraceRecord>,
}

impl Rows<'_> {
    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        step: u64,
        phase: Phase,
        evals: u64,
        eta_used: f64,
        d_norm: f64,
        step_norm: f64,
        x: &Vector,
        estimate: Option<&Vector>,
        boundary: bool,
    ) -> lena::Result<()> {
        let (f_full, grad_norm_full) = self.opts.observe(self.problem, x, step, boundary)?;
        let estimator_error = match (self.opts.estimator_error, estimate) {
            (true, Some(d)) => Some((d - self.problem.full_gradient(x)?).norm()),
            _ => None,
        };
        self.trace.push(TraceRecord {
            step,
            epoch: 1,
            phase,
            sgrad_evals_cum: evals,
            eta_used,
            d_norm,
            step_norm,
            movement_sq_cum: 0.0,
            shrink_triggered: 0,
            f_full,
            grad_norm_full,
            estimator_error,
            mode: ParamMode::Manual,
        });
        Ok(())
    }
}

fn outcome(rows: Rows, x: Vector, status: RunStatus, evals: u64) -> RunOutcome {
    RunOutcome { x_out: x.clone(), status, trace: rows.trace, certificate: None, sgrad_evals: evals, last_iterate: x }
}

pub fn baseline_run(
    problem: &dyn StochasticProblem,
    params: &BaselineParams,
    x0: &Vector,
    rng: &mut dyn RngCore,
    opts: &TraceOptions,
) -> lena::Result<RunOutcome> {
    params.validate()?;
    if problem.dim() != x0.len() {
        return Err(lena::Error::DimensionMismatch { expected: problem.dim(), got: x0.len() });
    }
    match params.kind {
        BaselineKind::Sgd | BaselineKind::PerturbedSgd => sgd_run(problem, params, x0, rng, opts),
        BaselineKind::PlainSpider => spider_run(problem, params, x0, rng, opts),
    }
}

fn sgd_run(
    problem: &dyn StochasticProblem,
    p: &BaselineParams,
    x0: &Vector,
    rng: &mut dyn RngCore,
    opts: &TraceOptions,
) -> lena::Result<RunOutcome> {
    let mut rows = Rows { problem, opts, trace: Vec::new() };
    let mut x = x0.clone();
    let mut evals = 0u64;
    let mut t = 0u64;
    let mut sgd_steps = 0u64;
    rows.push(t, Phase::Init, evals, 0.0, 0.0, 0.0, &x, None, true)?;
    let perturbs = p.kind == BaselineKind::PerturbedSgd && p.radius > 0.0;
    let cost = p.mini_batch as u64;
    loop {
        if evals.saturating_add(cost) > p.budget {
            return Ok(outcome(rows, x, RunStatus::BudgetExhausted, evals));
        }
        let samples: Vec<Sample> = (0..p.mini_batch).map(|_| problem.draw_sample(rng)).collect();
        let g = mean_gradient(problem, &x, &samples)?;
        evals += cost;
        let g_norm = g.norm();
        if g_norm <= p.tolerance {
            return Ok(outcome(rows, x, RunStatus::Converged, evals));
        }
        let x_new = &x - &g * p.eta;
        let step_norm = (&x_new - &x).norm();
        x = x_new;
        t += 1;
        sgd_steps += 1;
        rows.push(t, Phase::Gd, evals, p.eta, g_norm, step_norm, &x, None, false)?;
        if perturbs && sgd_steps.is_multiple_of(p.period) {
            let x_new = &x + uniform_ball(x.len(), p.radius, rng);
            let step_norm = (&x_new - &x).norm();
            x = x_new;
            t += 1;
            rows.push(t, Phase::Perturb, evals, 0.0, g_norm, step_norm, &x, None, true)?;
        }
    }
}

fn spider_run(
    problem: &dyn StochasticProblem,
    p: &BaselineParams,
    x0: &Vector,
    rng: &mut dyn RngCore,
    opts: &TraceOptions,
) -> lena::Result<RunOutcome> {
    let mut rows = Rows { problem, opts, trace: Vec::new() };
    let config = EstimatorConfig::spider(p.big_batch, p.mini_batch, p.loop_len);
    config.validate()?;
    if p.big_batch as u64 > p.budget {
        return Ok(outcome(rows, x0.clone(), RunStatus::BudgetExhausted, 0));
    }
    let (mut est, first) = EstimatorState::init(config, x0, problem, rng)?;
    let mut evals = first.evals;
    let mut x = x0.clone();
    let mut t = 0u64;
    rows.push(t, Phase::Init, evals, 0.0, est.estimate().norm(), 0.0, &x, Some(est.estimate()), true)?;
    loop {
        let d_norm = est.estimate().norm();
        if d_norm <= p.tolerance {
            return Ok(outcome(rows, x, RunStatus::Converged, evals));
        }
        if evals.saturating_add(est.next_cost()) > p.budget {
            return Ok(outcome(rows, x, RunStatus::BudgetExhausted, evals));
        }
        let x_new = gd_step(&x, est.estimate(), p.eta)?;
        evals += est.update(&x_new, &x, problem, rng)?.evals;
        let step_norm = (&x_new - &x).norm();
        x = x_new;
        t += 1;
        rows.push(t, Phase::Gd, evals, p.eta / d_norm, d_norm, step_norm, &x, Some(est.estimate()), false)?;
    }
}
