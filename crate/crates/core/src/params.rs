//! Hyperparameters of the driver and their derivation from problem constants.
//!
//! Every asymptotic constant is replaced by the explicit one that makes the
//! corresponding estimate hold:
//!
//! SPIDER (`ℓ = log(4/δ)`):
//! - `B ≥ 32ℓσ²/ε²` makes the estimator error bound `√(8ℓ)σ/√B ≤ ε/2`;
//! - `B ≥ 32ℓσ²ρ²/ε_H⁴` makes the same bound `≤ ε_H²/(2ρ)`;
//! - `√B ≥ 16ℓ/(η_H² ε_H²)` is the escape-phase batch requirement;
//! - `b = q = ⌈√B⌉`, then `B = b²`;
//! - `η = σ/(2√B L)`, `D̄ = min(σ²/(4BL²), 0.99·C²L²η_H²ε_H²/(ρ² t_thres²))`;
//! - `r = min{σ/(2√B L), ℓη_Hσ²/(2Bε), √(2ℓη_Hσ²/(BL)), Lη_Hε_H/(Cρ)}`;
//! - `η_H ≤ min{1/(16L log Θ), 1/(8CL log t_thres), 1/(L√(128ℓ))}`,
//!   `t_thres = ⌈2 log Θ/(η_H ε_H)⌉`, `Θ = η_H ε_H √d L/(Cρδr)`,
//!   `C = log(d·t_thres/δ)`.
//!
//! STORM:
//! - `b ≥ 2¹¹ℓσ/ε` and `b ≥ 2¹¹ℓσρ/ε_H²` make the error bound `2¹⁰ℓσ/b`
//!   at most `ε/2` and `ε_H²/(2ρ)`;
//! - `b ≥ 16ℓ/(η_H² L² ε_H²)`, plus `b ≥ 56²ℓ/(η_H ε_H)` and
//!   `b ≥ 4·56²ℓ·t_thres` so that `a = 56²ℓ/b` already satisfies
//!   `a ≤ η_H ε_H` and `a ≤ 1/(4 t_thres)`;
//! - `B = b²`, `η = σ/(2bL)`, `D̄ = min(σ²/(4b²L²), 0.99·L²η_H²ε_H²/(ρ² t_thres²))`;
//! - `r = min{σ/(2bL), ℓ²η_Hσ²/(4b²ε), √(2ℓ²η_Hσ²/(b²L)), Lη_Hε_H/ρ}`;
//! - `η_H ≤ min{1/(10L log(8ε_H L/(ρ r₀))), 1/(10L log t_thres), 1/(2¹² L ℓ)}`
//!   with `r₀ = δr/√d`, `t_thres = ⌈2 log(8ε_H√d/(ρδr))/(η_H ε_H)⌉`.
//!
//! `η_H`, `t_thres`, `C` and the batch sizes depend on each other through
//! logarithms. They are solved by fixed-point iteration starting from
//! `η_H = 1/(16L)`, only ever shrinking `η_H` and growing `t_thres`.
//!
//! With `σ = 0` the estimators are exact, so the noise-driven terms drop out:
//! `B = b = q = 1`, `η = ε/(2L)`, `r = Lη_Hε_H/(Cρ)` and `D̄` keeps only the
//! escape-phase bound.
//!
//! These constants are extremely conservative; practical runs use
//! [`ParamMode::Manual`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{EstimatorConfig, EstimatorKind};

/// Rounds allowed for the `η_H ↔ t_thres ↔ C` fixed point.
pub const FIXED_POINT_ROUNDS: usize = 100;

/// Largest batch size or escape length converted to an integer (2⁶³).
pub const MAX_COUNT: f64 = 9_223_372_036_854_775_808.0;

/// Slack on strict inequalities of the escape-phase movement budget.
pub const STRICT_MARGIN: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamMode {
    Theorem,
    Manual,
}

/// Targets and problem constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemInputs {
    pub eps: f64,
    pub eps_h: f64,
    pub delta: f64,
    pub sigma: f64,
    pub smoothness: f64,
    pub hessian_lipschitz: f64,
    pub value_gap: f64,
    pub dim: usize,
}

impl ProblemInputs {
    fn validate(&self) -> Result<()> {
        let positive = [
            ("eps", self.eps),
            ("eps_h", self.eps_h),
            ("smoothness", self.smoothness),
            ("hessian_lipschitz", self.hessian_lipschitz),
            ("value_gap", self.value_gap),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be finite and nonnegative, got {}", self.sigma)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParameter(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        Ok(())
    }

    /// `log(4/δ)`.
    pub fn log_term(&self) -> f64 {
        (4.0 / self.delta).ln()
    }
}

/// Step sizes, radii and batch sizes supplied directly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManualParams {
    pub eta: f64,
    pub eta_h: f64,
    pub radius: f64,
    pub t_thres: usize,
    pub dbar: f64,
    pub big_batch: usize,
    pub mini_batch: usize,
    pub loop_len: usize,
    pub storm_weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub kind: EstimatorKind,
    pub mode: ParamMode,
    pub eps: f64,
    pub eps_h: f64,
    pub delta: f64,
    pub sigma: f64,
    pub smoothness: f64,
    pub hessian_lipschitz: f64,
    pub value_gap: f64,
    /// GD-phase movement per step.
    pub eta: f64,
    /// Escape-phase step size.
    pub eta_h: f64,
    /// Perturbation radius.
    pub radius: f64,
    /// Escape-phase length.
    pub t_thres: usize,
    /// Average squared-movement budget per escape step.
    pub dbar: f64,
    pub big_batch: usize,
    pub mini_batch: usize,
    pub loop_len: usize,
    pub storm_weight: f64,
    /// Logarithmic constant `C` (SPIDER only; 1 for STORM).
    pub log_const: f64,
    /// Maximum stochastic gradient evaluations.
    pub budget: u64,
}

impl HyperParams {
    pub fn manual(kind: EstimatorKind, inputs: &ProblemInputs, m: &ManualParams) -> Result<Self> {
        let p = Self {
            kind,
            mode: ParamMode::Manual,
            eps: inputs.eps,
            eps_h: inputs.eps_h,
            delta: inputs.delta,
            sigma: inputs.sigma,
            smoothness: inputs.smoothness,
            hessian_lipschitz: inputs.hessian_lipschitz,
            value_gap: inputs.value_gap,
            eta: m.eta,
            eta_h: m.eta_h,
            radius: m.radius,
            t_thres: m.t_thres,
            dbar: m.dbar,
            big_batch: m.big_batch,
            mini_batch: m.mini_batch,
            loop_len: if kind == EstimatorKind::Spider { m.loop_len } else { 1 },
            storm_weight: if kind == EstimatorKind::Storm { m.storm_weight } else { 1.0 },
            log_const: 1.0,
            budget: u64::MAX,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = budget;
        self
    }

    /// Structural checks needed by the driver.
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("eps", self.eps > 0.0),
            ("eps_h", self.eps_h > 0.0),
            ("delta", self.delta > 0.0 && self.delta < 1.0),
            ("eta", self.eta > 0.0 && self.eta.is_finite()),
            ("eta_h", self.eta_h > 0.0 && self.eta_h.is_finite()),
            ("radius", self.radius >= 0.0 && self.radius.is_finite()),
            ("t_thres", self.t_thres >= 1),
            ("dbar", self.dbar > 0.0 && self.dbar.is_finite()),
        ];
        for (name, ok) in checks {
            if !ok {
                return Err(Error::InvalidParameter(format!("{name} is out of range")));
            }
        }
        self.estimator_config().validate()
    }

    pub fn estimator_config(&self) -> EstimatorConfig {
        match self.kind {
            EstimatorKind::Spider => EstimatorConfig::spider(self.big_batch, self.mini_batch, self.loop_len),
            EstimatorKind::Storm => EstimatorConfig::storm(self.big_batch, self.mini_batch, self.storm_weight),
        }
    }
}

/// Theorem-mode parameters before conversion to runnable integers.
///
/// Batch sizes and the escape length are integral but kept as `f64`: the
/// exact constants routinely exceed 64-bit integers (STORM's `B = b²` in
/// particular), and the formulas must stay checkable even then.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub kind: EstimatorKind,
    pub inputs: ProblemInputs,
    pub eta: f64,
    pub eta_h: f64,
    pub radius: f64,
    pub t_thres: f64,
    pub dbar: f64,
    pub big_batch: f64,
    pub mini_batch: f64,
    pub loop_len: f64,
    pub storm_weight: f64,
    pub log_const: f64,
    /// Fixed-point rounds used.
    pub rounds: usize,
}

impl Schedule {
    /// Runnable parameters; fails when a batch size or `t_thres` does not
    /// fit the platform integer.
    pub fn into_hyper_params(&self) -> Result<HyperParams> {
        let i = &self.inputs;
        let p = HyperParams {
            kind: self.kind,
            mode: ParamMode::Theorem,
            eps: i.eps,
            eps_h: i.eps_h,
            delta: i.delta,
            sigma: i.sigma,
            smoothness: i.smoothness,
            hessian_lipschitz: i.hessian_lipschitz,
            value_gap: i.value_gap,
            eta: self.eta,
            eta_h: self.eta_h,
            radius: self.radius,
            t_thres: to_count("t_thres", self.t_thres)?,
            dbar: self.dbar,
            big_batch: to_count("big batch", self.big_batch)?,
            mini_batch: to_count("mini batch", self.mini_batch)?,
            loop_len: to_count("loop length", self.loop_len)?,
            storm_weight: self.storm_weight,
            log_const: self.log_const,
            budget: u64::MAX,
        };
        p.validate()?;
        Ok(p)
    }
}

fn to_count(name: &str, v: f64) -> Result<usize> {
    if !(v.is_finite() && (1.0..=MAX_COUNT).contains(&v)) {
        return Err(Error::InvalidParameter(format!("derived {name} {v:e} does not fit a machine integer")));
    }
    Ok(v as usize)
}

/// Derives every hyperparameter from targets and problem constants.
pub fn derive_params(kind: EstimatorKind, inputs: &ProblemInputs) -> Result<HyperParams> {
    derive_schedule(kind, inputs)?.into_hyper_params()
}

/// Derives the theorem-mode schedule without integer conversion.
pub fn derive_schedule(kind: EstimatorKind, inputs: &ProblemInputs) -> Result<Schedule> {
    inputs.validate()?;
    match kind {
        EstimatorKind::Spider => derive_spider(inputs),
        EstimatorKind::Storm => derive_storm(inputs),
    }
}

fn ceil1(v: f64) -> f64 {
    v.ceil().max(1.0)
}

/// Logarithm floored at 1 so the step-size caps stay finite near `Θ ≈ 1`.
fn log1(v: f64) -> f64 {
    v.ln().max(1.0)
}

fn finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InvalidParameter(format!("derived {name} is not finite")))
    }
}

struct SpiderState {
    b: f64,
    radius: f64,
    log_theta: f64,
}

fn spider_state(i: &ProblemInputs, eta_h: f64, c: f64) -> SpiderState {
    let (l, rho, s, eps, eh) = (i.smoothness, i.hessian_lipschitz, i.sigma, i.eps, i.eps_h);
    let ell = i.log_term();
    let curvature_radius = l * eta_h * eh / (c * rho);
    let (b, radius) = if s == 0.0 {
        (1.0, curvature_radius)
    } else {
        let big = (32.0 * ell * s * s / (eps * eps))
            .max(32.0 * ell * s * s * rho * rho / eh.powi(4))
            .max((16.0 * ell / (eta_h * eta_h * eh * eh)).powi(2));
        let b = ceil1(ceil1(big).sqrt());
        let big = b * b;
        let radius = (s / (2.0 * b * l))
            .min(ell * eta_h * s * s / (2.0 * big * eps))
            .min((2.0 * ell * eta_h * s * s / (big * l)).sqrt())
            .min(curvature_radius);
        (b, radius)
    };
    let theta = eta_h * eh * (i.dim as f64).sqrt() * l / (c * rho * i.delta * radius);
    SpiderState { b, radius, log_theta: log1(theta) }
}

fn derive_spider(i: &ProblemInputs) -> Result<Schedule> {
    let (l, rho, s, eps, eh, delta) = (i.smoothness, i.hessian_lipschitz, i.sigma, i.eps, i.eps_h, i.delta);
    let ell = i.log_term();
    let dim = i.dim as f64;

    let mut eta_h = 1.0 / (16.0 * l);
    let mut t_thres = ceil1(2.0 * (1.0 / delta).ln() / (eta_h * eh));
    let mut c = (dim * t_thres / delta).ln();
    let mut rounds = 0;
    loop {
        if rounds == FIXED_POINT_ROUNDS {
            return Err(Error::NoFixedPoint { rounds, eta_h, t_thres: t_thres as usize, log_const: c });
        }
        rounds += 1;
        let st = spider_state(i, eta_h, c);
        let t_new = finite("t_thres", ceil1(2.0 * st.log_theta / (eta_h * eh)).max(t_thres))?;
        let c_new = (dim * t_new / delta).ln();
        let eta_new = (1.0 / (16.0 * l * st.log_theta))
            .min(1.0 / (8.0 * c_new * l * log1(t_new)))
            .min(1.0 / (l * (128.0 * ell).sqrt()))
            .min(eta_h);
        let done = t_new == t_thres && eta_new >= eta_h * (1.0 - 1e-12) && (c_new - c).abs() <= 1e-12 * c;
        eta_h = eta_new;
        t_thres = t_new;
        c = c_new;
        if done {
            break;
        }
    }

    let st = spider_state(i, eta_h, c);
    let b = st.b;
    let big = b * b;
    let escape_budget = STRICT_MARGIN * (c * l * eta_h * eh / (rho * t_thres)).powi(2);
    let (eta, dbar) = if s == 0.0 {
        (eps / (2.0 * l), escape_budget)
    } else {
        ((s / (2.0 * b * l)).min(eps / (2.0 * l)), (s * s / (4.0 * big * l * l)).min(escape_budget))
    };
    Ok(Schedule {
        kind: EstimatorKind::Spider,
        inputs: *i,
        eta,
        eta_h,
        radius: st.radius,
        t_thres,
        dbar,
        big_batch: big,
        mini_batch: b,
        loop_len: b,
        storm_weight: 1.0,
        log_const: c,
        rounds,
    })
}

struct StormState {
    b: f64,
    radius: f64,
    log_escape: f64,
    log_start: f64,
}

fn storm_state(i: &ProblemInputs, eta_h: f64, t_thres: f64) -> StormState {
    let (l, rho, s, eps, eh, delta) = (i.smoothness, i.hessian_lipschitz, i.sigma, i.eps, i.eps_h, i.delta);
    let ell = i.log_term();
    let curvature_radius = l * eta_h * eh / rho;
    let (b, radius) = if s == 0.0 {
        (1.0, curvature_radius)
    } else {
        let b = ceil1(
            (2048.0 * ell * s / eps)
                .max(2048.0 * ell * s * rho / (eh * eh))
                .max(16.0 * ell / (eta_h * eta_h * l * l * eh * eh))
                .max(56.0 * 56.0 * ell / (eta_h * eh))
                .max(4.0 * 56.0 * 56.0 * ell * t_thres),
        );
        let radius = (s / (2.0 * b * l))
            .min(ell * ell * eta_h * s * s / (4.0 * b * b * eps))
            .min((2.0 * ell * ell * eta_h * s * s / (b * b * l)).sqrt())
            .min(curvature_radius);
        (b, radius)
    };
    let sqrt_d = (i.dim as f64).sqrt();
    let r0 = delta * radius / sqrt_d;
    StormState {
        b,
        radius,
        log_escape: log1(8.0 * eh * sqrt_d / (rho * delta * radius)),
        log_start: log1(8.0 * eh * l / (rho * r0)),
    }
}

fn derive_storm(i: &ProblemInputs) -> Result<Schedule> {
    let (l, rho, s, eps, eh, delta) = (i.smoothness, i.hessian_lipschitz, i.sigma, i.eps, i.eps_h, i.delta);
    let ell = i.log_term();

    let mut eta_h = 1.0 / (16.0 * l);
    let mut t_thres = ceil1(2.0 * (1.0 / delta).ln() / (eta_h * eh));
    let mut rounds = 0;
    loop {
        if rounds == FIXED_POINT_ROUNDS {
            return Err(Error::NoFixedPoint { rounds, eta_h, t_thres: t_thres as usize, log_const: 1.0 });
        }
        rounds += 1;
        let st = storm_state(i, eta_h, t_thres);
        let t_new = finite("t_thres", ceil1(2.0 * st.log_escape / (eta_h * eh)).max(t_thres))?;
        let eta_new = (1.0 / (10.0 * l * st.log_start))
            .min(1.0 / (10.0 * l * log1(t_new)))
            .min(1.0 / (4096.0 * l * ell))
            .min(eta_h);
        let done = t_new == t_thres && eta_new >= eta_h * (1.0 - 1e-12);
        eta_h = eta_new;
        t_thres = t_new;
        if done {
            break;
        }
    }

    let st = storm_state(i, eta_h, t_thres);
    let b = st.b;
    let escape_budget = STRICT_MARGIN * (l * eta_h * eh / (rho * t_thres)).powi(2);
    let unclipped = 56.0 * 56.0 * ell / b;
    let weight = unclipped.min(1.0 / (4.0 * t_thres)).min(eta_h * eh).min(1.0);
    let (eta, dbar) = if s == 0.0 {
        (eps / (2.0 * l), escape_budget)
    } else {
        ((s / (2.0 * b * l)).min(eps / (2.0 * l)), (s * s / (4.0 * b * b * l * l)).min(escape_budget))
    };
    Ok(Schedule {
        kind: EstimatorKind::Storm,
        inputs: *i,
        eta,
        eta_h,
        radius: st.radius,
        t_thres,
        dbar,
        big_batch: b * b,
        mini_batch: b,
        loop_len: 1.0,
        storm_weight: weight,
        log_const: 1.0,
        rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(sigma: f64) -> ProblemInputs {
        ProblemInputs {
            eps: 0.1,
            eps_h: 0.1_f64.sqrt(),
            delta: 0.01,
            sigma,
            smoothness: 1.0,
            hessian_lipschitz: 1.0,
            value_gap: 1.0,
            dim: 10,
        }
    }

    #[test]
    fn spider_batch_covers_the_closed_form_terms() {
        let p = derive_schedule(EstimatorKind::Spider, &inputs(1.0)).unwrap();
        let ell = 400.0_f64.ln();
        assert!((ell - 5.991).abs() < 1e-3);
        // 32·ℓ·σ²/ε² = 32·ℓ·σ²ρ²/ε_H⁴ = 32·ℓ·100
        assert!(p.big_batch >= 32.0 * ell * 100.0);
        assert!(p.big_batch >= 19_172.0);
        assert_eq!(p.mini_batch, p.loop_len);
        assert_eq!(p.mini_batch * p.mini_batch, p.big_batch);
        assert_eq!(p.mini_batch, p.mini_batch.round());
        let expected_eta = 1.0 / (2.0 * p.big_batch.sqrt());
        assert!((p.eta - expected_eta).abs() <= 1e-15 * expected_eta);
    }

    #[test]
    fn runnable_spider_params_for_loose_targets() {
        let i = ProblemInputs { eps: 1.0, eps_h: 1.0, delta: 0.5, sigma: 0.1, ..inputs(0.1) };
        let p = derive_params(EstimatorKind::Spider, &i).unwrap();
        assert_eq!(p.mode, ParamMode::Theorem);
        assert_eq!(p.mini_batch * p.mini_batch, p.big_batch);
        assert!(p.eta <= i.eps / (2.0 * i.smoothness));
    }

    #[test]
    fn deterministic_mode() {
        for kind in [EstimatorKind::Spider, EstimatorKind::Storm] {
            let p = derive_params(kind, &inputs(0.0)).unwrap();
            assert_eq!((p.big_batch, p.mini_batch), (1, 1));
            assert!((p.eta - 0.1 / 2.0).abs() < 1e-15);
            assert!(p.radius > 0.0 && p.dbar > 0.0);
        }
        let p = derive_params(EstimatorKind::Spider, &inputs(0.0)).unwrap();
        assert_eq!(p.loop_len, 1);
    }

    #[test]
    fn invalid_inputs_rejected() {
        let mut i = inputs(1.0);
        i.delta = 1.0;
        assert!(derive_params(EstimatorKind::Spider, &i).is_err());
        let mut i = inputs(1.0);
        i.eps = 0.0;
        assert!(derive_params(EstimatorKind::Storm, &i).is_err());
        let mut i = inputs(-1.0);
        i.sigma = -1.0;
        assert!(derive_params(EstimatorKind::Spider, &i).is_err());
    }

    #[test]
    fn storm_weight_is_unclipped() {
        let sch = derive_schedule(EstimatorKind::Storm, &inputs(1.0)).unwrap();
        let ell = 400.0_f64.ln();
        assert!((sch.storm_weight - 56.0 * 56.0 * ell / sch.mini_batch).abs() <= 1e-15 * sch.storm_weight);
        assert!(sch.storm_weight <= sch.eta_h * sch.inputs.eps_h);
        assert!(sch.storm_weight <= 1.0 / (4.0 * sch.t_thres));
        assert_eq!(sch.big_batch, sch.mini_batch * sch.mini_batch);
    }

    #[test]
    fn oversized_storm_batch_is_reported() {
        // B = b² is far beyond 2⁶³ for these targets
        let err = derive_params(EstimatorKind::Storm, &inputs(1.0)).unwrap_err();
        assert!(err.to_string().contains("big batch"), "{err}");
    }

    #[test]
    fn manual_params_validated() {
        let m = ManualParams {
            eta: 0.1,
            eta_h: 0.1,
            radius: 0.01,
            t_thres: 10,
            dbar: 0.0,
            big_batch: 4,
            mini_batch: 2,
            loop_len: 2,
            storm_weight: 0.5,
        };
        assert!(HyperParams::manual(EstimatorKind::Spider, &inputs(1.0), &m).is_err());
        let ok = ManualParams { dbar: 1e-3, ..m };
        let p = HyperParams::manual(EstimatorKind::Spider, &inputs(1.0), &ok).unwrap();
        assert_eq!(p.mode, ParamMode::Manual);
        let bad_weight = ManualParams { storm_weight: 1.5, ..ok };
        assert!(HyperParams::manual(EstimatorKind::Storm, &inputs(1.0), &bad_weight).is_err());
    }
}
