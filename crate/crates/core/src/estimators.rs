//! Recursive stochastic gradient estimators.
//!
//! Both estimators maintain `d_t ≈ ∇F(x_t)` using two-point queries under
//! shared randomness:
//!
//! - SPIDER/SARAH: every `q` steps a fresh mean of `B` gradients, otherwise
//!   `d_{t+1} = d_t + (1/b) Σ [∇f(x_{t+1}; ξ) − ∇f(x_t; ξ)]`.
//! - STORM: `d_{t+1} = (1 − a)(d_t − (1/b) Σ ∇f(x_t; ξ)) + (1/b) Σ ∇f(x_{t+1}; ξ)`.
//!
//! The counter always equals the index of the iterate the estimate refers to:
//! initialization yields `d_1` with counter 1, and an update called with
//! counter `t` produces `d_{t+1}`. SPIDER refreshes when the incoming counter
//! is a multiple of `q` (initialization is the `t = 0` refresh).
//!
//! Samples are drawn in index order `1..=b` from the caller's stream, so a
//! fixed stream gives a fixed sequence of draws.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::problems::{Sample, StochasticProblem, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Spider,
    Storm,
}

/// How batches are drawn from a finite sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Sampling {
    /// Independent uniform draws.
    #[default]
    WithReplacement,
    /// Distinct components per batch; a batch of size `n` is exhaustive.
    /// Meant for exact-oracle tests.
    WithoutReplacement,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    /// `B`: initial (and SPIDER refresh) batch size.
    pub big_batch: usize,
    /// `b`: minibatch size of the recursive correction.
    pub mini_batch: usize,
    /// `q`: SPIDER refresh period.
    pub loop_len: usize,
    /// `a`: STORM weight in `(0, 1]`.
    pub weight: f64,
    pub sampling: Sampling,
}

impl EstimatorConfig {
    pub fn spider(big_batch: usize, mini_batch: usize, loop_len: usize) -> Self {
        Self {
            kind: EstimatorKind::Spider,
            big_batch,
            mini_batch,
            loop_len,
            weight: 1.0,
            sampling: Sampling::WithReplacement,
        }
    }

    pub fn storm(big_batch: usize, mini_batch: usize, weight: f64) -> Self {
        Self {
            kind: EstimatorKind::Storm,
            big_batch,
            mini_batch,
            loop_len: 1,
            weight,
            sampling: Sampling::WithReplacement,
        }
    }

    pub fn with_sampling(mut self, sampling: Sampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.big_batch == 0 {
            return Err(Error::InvalidParameter("big batch B must be positive".into()));
        }
        if self.mini_batch == 0 {
            return Err(Error::InvalidParameter("mini batch b must be positive".into()));
        }
        match self.kind {
            EstimatorKind::Spider if self.loop_len == 0 => {
                Err(Error::InvalidParameter("loop length q must be positive".into()))
            }
            EstimatorKind::Storm if !(self.weight > 0.0 && self.weight <= 1.0) => {
                Err(Error::InvalidParameter(format!("STORM weight must lie in (0, 1], got {}", self.weight)))
            }
            _ => Ok(()),
        }
    }
}

/// Which branch produced an estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Init,
    Refresh,
    Recursive,
}

/// Bookkeeping for one estimator call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EstimatorStep {
    pub branch: Branch,
    /// Counter of the estimate produced.
    pub counter: usize,
    /// Individual stochastic gradients computed (a pair counts 2).
    pub evals: u64,
}

#[derive(Clone, Debug)]
pub struct EstimatorState {
    config: EstimatorConfig,
    estimate: Vector,
    counter: usize,
}

impl EstimatorState {
    /// `d_1` as the mean of `B` stochastic gradients at `x1`.
    pub fn init(
        config: EstimatorConfig,
        x1: &Vector,
        problem: &dyn StochasticProblem,
        rng: &mut dyn RngCore,
    ) -> Result<(Self, EstimatorStep)> {
        config.validate()?;
        check_dim(problem.dim(), x1.len())?;
        let estimate = batch_mean(problem, x1, config.big_batch, config.sampling, rng)?;
        let state = Self { config, estimate, counter: 1 };
        let step = EstimatorStep { branch: Branch::Init, counter: 1, evals: config.big_batch as u64 };
        Ok((state, step))
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn estimate(&self) -> &Vector {
        &self.estimate
    }

    pub fn counter(&self) -> usize {
        self.counter
    }

    /// Gradient evaluations the next update will spend.
    pub fn next_cost(&self) -> u64 {
        match self.config.kind {
            EstimatorKind::Spider if self.counter.is_multiple_of(self.config.loop_len) => self.config.big_batch as u64,
            _ => 2 * self.config.mini_batch as u64,
        }
    }

    /// Advances from `d_t` (at `x_old`) to `d_{t+1}` (at `x_new`).
    pub fn update(
        &mut self,
        x_new: &Vector,
        x_old: &Vector,
        problem: &dyn StochasticProblem,
        rng: &mut dyn RngCore,
    ) -> Result<EstimatorStep> {
        match self.config.kind {
            EstimatorKind::Spider => self.spider_update(x_new, x_old, problem, rng),
            EstimatorKind::Storm => self.storm_update(x_new, x_old, problem, rng),
        }
    }

    pub fn spider_update(
        &mut self,
        x_new: &Vector,
        x_old: &Vector,
        problem: &dyn StochasticProblem,
        rng: &mut dyn RngCore,
    ) -> Result<EstimatorStep> {
        self.expect_kind(EstimatorKind::Spider)?;
        check_dim(problem.dim(), x_new.len())?;
        check_dim(problem.dim(), x_old.len())?;
        let cfg = self.config;
        let step = if self.counter.is_multiple_of(cfg.loop_len) {
            self.estimate = batch_mean(problem, x_new, cfg.big_batch, cfg.sampling, rng)?;
            EstimatorStep { branch: Branch::Refresh, counter: self.counter + 1, evals: cfg.big_batch as u64 }
        } else {
            let (mean_new, mean_old) = pair_means(problem, x_new, x_old, cfg.mini_batch, cfg.sampling, rng)?;
            self.estimate += mean_new - mean_old;
            EstimatorStep { branch: Branch::Recursive, counter: self.counter + 1, evals: 2 * cfg.mini_batch as u64 }
        };
        self.counter += 1;
        Ok(step)
    }

    pub fn storm_update(
        &mut self,
        x_new: &Vector,
        x_old: &Vector,
        problem: &dyn StochasticProblem,
        rng: &mut dyn RngCore,
    ) -> Result<EstimatorStep> {
        self.expect_kind(EstimatorKind::Storm)?;
        check_dim(problem.dim(), x_new.len())?;
        check_dim(problem.dim(), x_old.len())?;
        let cfg = self.config;
        let (mean_new, mean_old) = pair_means(problem, x_new, x_old, cfg.mini_batch, cfg.sampling, rng)?;
        self.estimate = storm_combine(&self.estimate, &mean_new, &mean_old, cfg.weight);
        self.counter += 1;
        Ok(EstimatorStep { branch: Branch::Recursive, counter: self.counter, evals: 2 * cfg.mini_batch as u64 })
    }

    fn expect_kind(&self, kind: EstimatorKind) -> Result<()> {
        if self.config.kind == kind {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("{:?} update called on a {:?} estimator", kind, self.config.kind)))
        }
    }
}

/// `(1 − a)(d − mean_old) + mean_new`.
pub fn storm_combine(d: &Vector, mean_new: &Vector, mean_old: &Vector, weight: f64) -> Vector {
    (d - mean_old) * (1.0 - weight) + mean_new
}

/// `‖d_t − ∇F(x_t)‖₂`; needs full-gradient access.
pub fn estimator_error(state: &EstimatorState, problem: &dyn StochasticProblem, x: &Vector) -> Result<f64> {
    let full = problem.full_gradient(x)?;
    check_dim(full.len(), state.estimate.len())?;
    Ok((&state.estimate - full).norm())
}

fn draw_batch(
    problem: &dyn StochasticProblem,
    size: usize,
    sampling: Sampling,
    rng: &mut dyn RngCore,
) -> Result<Vec<Sample>> {
    match (sampling, problem.num_components()) {
        (Sampling::WithoutReplacement, Some(n)) => {
            if size > n {
                return Err(Error::InvalidParameter(format!(
                    "batch of {size} cannot be drawn without replacement from {n} components"
                )));
            }
            if size == n {
                return Ok((0..n).map(Sample::Component).collect());
            }
            Ok(rand::seq::index::sample(rng, n, size).into_iter().map(Sample::Component).collect())
        }
        _ => Ok((0..size).map(|_| problem.draw_sample(rng)).collect()),
    }
}

fn batch_mean(
    problem: &dyn StochasticProblem,
    x: &Vector,
    size: usize,
    sampling: Sampling,
    rng: &mut dyn RngCore,
) -> Result<Vector> {
    let samples = draw_batch(problem, size, sampling, rng)?;
    crate::problems::mean_gradient(problem, x, &samples)
}

fn pair_means(
    problem: &dyn StochasticProblem,
    x_new: &Vector,
    x_old: &Vector,
    size: usize,
    sampling: Sampling,
    rng: &mut dyn RngCore,
) -> Result<(Vector, Vector)> {
    let samples = draw_batch(problem, size, sampling, rng)?;
    let mut acc_new = Vector::zeros(x_new.len());
    let mut acc_old = Vector::zeros(x_old.len());
    for s in samples {
        let (g_new, g_old) = problem.stoch_grad_pair(x_new, x_old, s)?;
        acc_new += g_new;
        acc_old += g_old;
    }
    let scale = 1.0 / size as f64;
    Ok((acc_new * scale, acc_old * scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{FiniteQuadratic, SaddleQuartic};
    use nalgebra::DMatrix;

    fn four_quadratics() -> FiniteQuadratic {
        let hs = vec![
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, -0.3, -0.3, 3.0]),
            DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.2]),
            DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 1.0]),
        ];
        let cs = vec![
            Vector::from_vec(vec![1.0, 0.0]),
            Vector::from_vec(vec![-1.0, 2.0]),
            Vector::from_vec(vec![0.5, 0.5]),
            Vector::from_vec(vec![0.0, -3.0]),
        ];
        FiniteQuadratic::new(hs, cs).unwrap()
    }

    fn grad_of(p: &FiniteQuadratic, x: &Vector, i: usize) -> Vector {
        p.stoch_grad(x, Sample::Component(i)).unwrap()
    }

    fn replay_draws(p: &FiniteQuadratic, seed: u64, count: usize) -> Vec<usize> {
        let mut rng = crate::stream(seed);
        (0..count)
            .map(|_| match p.draw_sample(&mut rng) {
                Sample::Component(i) => i,
                Sample::Exact => unreachable!(),
            })
            .collect()
    }

    #[test]
    fn zero_big_batch_rejected() {
        let p = four_quadratics();
        let mut rng = crate::stream(0);
        let r = EstimatorState::init(EstimatorConfig::spider(0, 1, 1), &Vector::zeros(2), &p, &mut rng);
        assert!(matches!(r, Err(Error::InvalidParameter(_))));
        let r = EstimatorState::init(EstimatorConfig::storm(1, 1, 0.0), &Vector::zeros(2), &p, &mut rng);
        assert!(r.is_err());
    }

    #[test]
    fn init_on_noiseless_instance_is_exact() {
        let p = SaddleQuartic::standard(3, -1.0, 2.0).unwrap();
        let x = Vector::from_vec(vec![0.2, -0.1, 0.4]);
        let mut rng = crate::stream(0);
        let (st, step) = EstimatorState::init(EstimatorConfig::spider(5, 2, 2), &x, &p, &mut rng).unwrap();
        assert!((st.estimate() - p.full_gradient(&x).unwrap()).norm() < 1e-15);
        assert_eq!(step.evals, 5);
        assert_eq!(st.counter(), 1);
    }

    #[test]
    fn exhaustive_init_equals_full_gradient() {
        let p = four_quadratics();
        let x = Vector::from_vec(vec![0.7, -0.4]);
        let mut rng = crate::stream(0);
        let cfg = EstimatorConfig::spider(4, 2, 2).with_sampling(Sampling::WithoutReplacement);
        let (st, _) = EstimatorState::init(cfg, &x, &p, &mut rng).unwrap();
        assert!(estimator_error(&st, &p, &x).unwrap() < 1e-14);
    }

    #[test]
    fn init_matches_replayed_draws() {
        let p = four_quadratics();
        let x = Vector::from_vec(vec![0.7, -0.4]);
        let mut rng = crate::stream(42);
        let (st, _) = EstimatorState::init(EstimatorConfig::spider(2, 2, 2), &x, &p, &mut rng).unwrap();
        let idx = replay_draws(&p, 42, 2);
        let expected = (grad_of(&p, &x, idx[0]) + grad_of(&p, &x, idx[1])) / 2.0;
        assert!((st.estimate() - expected).norm() < 1e-15);
    }

    #[test]
    fn spider_refresh_then_recursion_matches_replay() {
        let p = four_quadratics();
        let x1 = Vector::from_vec(vec![0.7, -0.4]);
        let x2 = Vector::from_vec(vec![0.5, -0.1]);
        let x3 = Vector::from_vec(vec![0.2, 0.3]);
        let mut rng = crate::stream(7);
        // q = 2: init (t=0, refresh), t=1 recursive, t=2 refresh, t=3 recursive
        let (mut st, _) = EstimatorState::init(EstimatorConfig::spider(2, 2, 2), &x1, &p, &mut rng).unwrap();
        let s2 = st.update(&x2, &x1, &p, &mut rng).unwrap();
        let s3 = st.update(&x3, &x2, &p, &mut rng).unwrap();
        assert_eq!(s2.branch, Branch::Recursive);
        assert_eq!(s3.branch, Branch::Refresh);

        let idx = replay_draws(&p, 7, 6);
        let d1 = (grad_of(&p, &x1, idx[0]) + grad_of(&p, &x1, idx[1])) / 2.0;
        let d2 = &d1
            + ((grad_of(&p, &x2, idx[2]) - grad_of(&p, &x1, idx[2]))
                + (grad_of(&p, &x2, idx[3]) - grad_of(&p, &x1, idx[3])))
                / 2.0;
        let d3 = (grad_of(&p, &x3, idx[4]) + grad_of(&p, &x3, idx[5])) / 2.0;
        assert!(d2.norm() > 0.0);
        assert!((st.estimate() - d3).norm() < 1e-14);

        // and the recursive value itself
        let mut rng = crate::stream(7);
        let (mut st, _) = EstimatorState::init(EstimatorConfig::spider(2, 2, 2), &x1, &p, &mut rng).unwrap();
        st.update(&x2, &x1, &p, &mut rng).unwrap();
        assert!((st.estimate() - d2).norm() < 1e-14);
    }

    #[test]
    fn spider_refreshes_exactly_at_multiples_of_q() {
        let p = four_quadratics();
        let mut rng = crate::stream(1);
        let x = Vector::from_vec(vec![0.1, 0.1]);
        let (mut st, _) = EstimatorState::init(EstimatorConfig::spider(3, 1, 4), &x, &p, &mut rng).unwrap();
        let mut refreshes = Vec::new();
        for _ in 0..20 {
            let t = st.counter();
            let cost = st.next_cost();
            let step = st.update(&x, &x, &p, &mut rng).unwrap();
            assert_eq!(step.evals, cost);
            if step.branch == Branch::Refresh {
                refreshes.push(t);
            }
        }
        assert_eq!(refreshes, vec![4, 8, 12, 16, 20]);
    }

    #[test]
    fn linear_objective_keeps_spider_estimate() {
        // H_i = 0: per-sample gradients are constant in x
        let hs = vec![DMatrix::zeros(2, 2); 3];
        let cs =
            vec![Vector::from_vec(vec![1.0, 2.0]), Vector::from_vec(vec![-1.0, 0.0]), Vector::from_vec(vec![3.0, 1.0])];
        let p = FiniteQuadratic::new(hs, cs).unwrap();
        let mut rng = crate::stream(5);
        let x1 = Vector::from_vec(vec![0.0, 0.0]);
        let (mut st, _) = EstimatorState::init(EstimatorConfig::spider(2, 2, 10), &x1, &p, &mut rng).unwrap();
        let d1 = st.estimate().clone();
        let mut x = x1;
        for k in 1..9 {
            let next = &x + Vector::from_vec(vec![0.1 * k as f64, -0.3]);
            st.update(&next, &x, &p, &mut rng).unwrap();
            x = next;
            assert_eq!(st.estimate(), &d1);
        }
    }

    #[test]
    fn zero_step_leaves_spider_estimate_unchanged() {
        let p = four_quadratics();
        let mut rng = crate::stream(2);
        let x = Vector::from_vec(vec![0.3, 0.9]);
        let (mut st, _) = EstimatorState::init(EstimatorConfig::spider(2, 3, 5), &x, &p, &mut rng).unwrap();
        let d1 = st.estimate().clone();
        let step = st.update(&x, &x, &p, &mut rng).unwrap();
        assert_eq!(step.branch, Branch::Recursive);
        assert_eq!(st.estimate(), &d1);
    }

    #[test]
    fn storm_with_unit_weight_is_minibatch_gradient() {
        let p = four_quadratics();
        let x1 = Vector::from_vec(vec![0.3, 0.9]);
        let x2 = Vector::from_vec(vec![-0.2, 0.4]);
        let mut rng = crate::stream(3);
        let (mut st, _) = EstimatorState::init(EstimatorConfig::storm(2, 3, 1.0), &x1, &p, &mut rng).unwrap();
        st.update(&x2, &x1, &p, &mut rng).unwrap();
        let idx = replay_draws(&p, 3, 5);
        let expected = (grad_of(&p, &x2, idx[2]) + grad_of(&p, &x2, idx[3]) + grad_of(&p, &x2, idx[4])) / 3.0;
        assert!((st.estimate() - expected).norm() < 1e-14);
    }

    #[test]
    fn storm_update_matches_replay() {
        let p = four_quadratics();
        let x1 = Vector::from_vec(vec![0.3, 0.9]);
        let x2 = Vector::from_vec(vec![-0.2, 0.4]);
        let mut rng = crate::stream(8);
        let (mut st, _) = EstimatorState::init(EstimatorConfig::storm(2, 2, 0.5), &x1, &p, &mut rng).unwrap();
        st.update(&x2, &x1, &p, &mut rng).unwrap();
        let idx = replay_draws(&p, 8, 4);
        let d1 = (grad_of(&p, &x1, idx[0]) + grad_of(&p, &x1, idx[1])) / 2.0;
        let old = (grad_of(&p, &x1, idx[2]) + grad_of(&p, &x1, idx[3])) / 2.0;
        let new = (grad_of(&p, &x2, idx[2]) + grad_of(&p, &x2, idx[3])) / 2.0;
        let expected = (d1 - old) * 0.5 + new;
        assert!((st.estimate() - expected).norm() < 1e-14);
    }

    #[test]
    fn storm_is_exact_on_noiseless_instances() {
        let p = SaddleQuartic::standard(3, -1.0, 2.0).unwrap();
        let mut rng = crate::stream(4);
        let mut x = Vector::from_vec(vec![0.5, 0.1, -0.2]);
        let (mut st, _) = EstimatorState::init(EstimatorConfig::storm(1, 1, 0.3), &x, &p, &mut rng).unwrap();
        for _ in 0..50 {
            let next = &x - st.estimate() * 0.05;
            st.update(&next, &x, &p, &mut rng).unwrap();
            x = next;
            assert!(estimator_error(&st, &p, &x).unwrap() < 1e-12);
        }
    }

    #[test]
    fn storm_interpolates_linearly_in_weight() {
        let d = Vector::from_vec(vec![1.0, -2.0]);
        let new = Vector::from_vec(vec![0.5, 0.5]);
        let old = Vector::from_vec(vec![0.25, -1.0]);
        let at = |a: f64| storm_combine(&d, &new, &old, a);
        assert_eq!(at(1.0), new);
        assert_eq!(at(0.0), &d + &new - &old);
        assert!((at(0.5) - (at(0.0) + at(1.0)) / 2.0).norm() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = four_quadratics();
        let mut rng = crate::stream(0);
        let x = Vector::zeros(2);
        let (mut st, _) = EstimatorState::init(EstimatorConfig::spider(1, 1, 3), &x, &p, &mut rng).unwrap();
        let bad = Vector::zeros(3);
        assert!(matches!(st.update(&bad, &x, &p, &mut rng), Err(Error::DimensionMismatch { .. })));
        assert!(st.storm_update(&x, &x, &p, &mut rng).is_err());
    }

    #[test]
    fn oversized_batch_without_replacement_rejected() {
        let p = four_quadratics();
        let mut rng = crate::stream(0);
        let cfg = EstimatorConfig::spider(5, 1, 1).with_sampling(Sampling::WithoutReplacement);
        assert!(EstimatorState::init(cfg, &Vector::zeros(2), &p, &mut rng).is_err());
    }
}
