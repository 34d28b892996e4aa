//! Experiment orchestration: instance construction, parameter resolution,
//! parallel trials, trace files and the run summary.
//!
//! Output layout of `run.out_dir`:
//!
//! - `trace_<algorithm>_seed<seed>.csv`, one per trial;
//! - `summary.json`, the per-trial [`SummaryRecord`]s plus aggregates;
//! - `config.toml`, the effective configuration after overrides.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use lena::{
    certify, derive_params, derive_schedule, lena_run, Certificate, HyperParams, MatrixSensing, ParamMode,
    ProblemInputs, RunOutcome, RunStatus, SaddleQuartic, Schedule, StochasticProblem, TraceOptions, TraceRecord,
    Vector,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{baseline_run, BaselineParams, DEFAULT_PERIOD};
use crate::config::{Algorithm, ProblemSpec, RunConfig};
use crate::error::{HarnessError, Result};

pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.toml";

/// A constructed problem instance.
#[derive(Clone, Debug)]
pub enum Instance {
    Sensing(MatrixSensing),
    Quartic(SaddleQuartic),
}

impl Instance {
    pub fn build(spec: &ProblemSpec) -> Result<Self> {
        Ok(match spec {
            ProblemSpec::MatrixSensing { d, r, n, seed, .. } => {
                Instance::Sensing(MatrixSensing::generate(*d, *r, *n, *seed)?)
            }
            ProblemSpec::SaddleQuartic {
                dim,
                lambda_min,
                eigenvalues,
                domain_radius,
                noise_sigma,
                noise_components,
                noise_seed,
                ..
            } => {
                let base = match eigenvalues {
                    Some(eig) => SaddleQuartic::new(eig, *domain_radius)?,
                    None => SaddleQuartic::standard(*dim, *lambda_min, *domain_radius)?,
                };
                Instance::Quartic(base.with_noise(*noise_sigma, *noise_components, *noise_seed)?)
            }
        })
    }

    pub fn problem(&self) -> &dyn StochasticProblem {
        match self {
            Instance::Sensing(p) => p,
            Instance::Quartic(p) => p,
        }
    }

    /// Starting point: the explicit `start`, else the rank-deficient init
    /// (matrix sensing) or the origin (quartic).
    pub fn start(&self, spec: &ProblemSpec) -> Result<Vector> {
        let (explicit, dim) = match spec {
            ProblemSpec::MatrixSensing { start, .. } | ProblemSpec::SaddleQuartic { start, .. } => {
                (start, self.problem().dim())
            }
        };
        if let Some(v) = explicit {
            if v.len() != dim {
                return Err(HarnessError::Config(format!("problem.start has {} entries, expected {dim}", v.len())));
            }
            return Ok(Vector::from_column_slice(v));
        }
        match (self, spec) {
            (Instance::Sensing(p), ProblemSpec::MatrixSensing { alpha, init_seed, .. }) => {
                Ok(p.saddle_init(*alpha, *init_seed)?)
            }
            _ => Ok(Vector::zeros(dim)),
        }
    }

    /// `‖UUᵀ − M*‖²_F / ‖M*‖²_F`, matrix sensing only.
    pub fn relative_error(&self, x: &Vector) -> Option<f64> {
        match self {
            Instance::Sensing(p) => p.relative_error(x).ok(),
            Instance::Quartic(_) => None,
        }
    }
}

/// Hyperparameters of one configured algorithm.
#[derive(Clone, Debug)]
pub enum Plan {
    Lena(HyperParams),
    Baseline(BaselineParams),
}

/// Everything shared by the trials of one configuration.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub instance: Instance,
    pub start: Vector,
    pub inputs: ProblemInputs,
    pub plan: Plan,
}

/// Targets plus constants: overrides first, then the instance's own values.
///
/// The value gap defaults to `F(start) − inf F` and is required in theorem
/// mode when the instance has no closed-form infimum.
pub fn problem_inputs(cfg: &RunConfig, problem: &dyn StochasticProblem, start: &Vector) -> Result<ProblemInputs> {
    let c = problem.constants();
    let k = &cfg.constants;
    let value_gap = match k.value_gap {
        Some(g) => g,
        None => match (problem.full_value(start), problem.infimum()) {
            (Ok(f), Some(inf)) => f - inf,
            _ if cfg.algorithm.mode == ParamMode::Theorem => {
                return Err(HarnessError::Config(
                    "constants.value_gap is required: the instance has no known infimum".into(),
                ))
            }
            _ => f64::NAN,
        },
    };
    Ok(ProblemInputs {
        eps: cfg.targets.eps,
        eps_h: cfg.targets.eps_h,
        delta: cfg.targets.delta,
        sigma: k.sigma.unwrap_or(c.noise_bound),
        smoothness: k.smoothness.unwrap_or(c.smoothness),
        hessian_lipschitz: k.hessian_lipschitz.unwrap_or(c.hessian_lipschitz),
        value_gap,
        dim: problem.dim(),
    })
}

/// Theorem-mode schedule for a perturbed algorithm, before integer conversion.
pub fn schedule(cfg: &RunConfig, prepared: &Prepared) -> Result<Option<Schedule>> {
    match (cfg.algorithm.name.lena_kind(), cfg.algorithm.mode) {
        (Some(kind), ParamMode::Theorem) => Ok(Some(derive_schedule(kind, &prepared.inputs)?)),
        _ => Ok(None),
    }
}

fn plan(cfg: &RunConfig, inputs: &ProblemInputs) -> Result<Plan> {
    let budget = cfg.run.budget;
    let m = &cfg.manual;
    let eps = cfg.targets.eps;
    if let Some(kind) = cfg.algorithm.name.lena_kind() {
        let hp = match cfg.algorithm.mode {
            ParamMode::Theorem => derive_params(kind, inputs)?,
            ParamMode::Manual => HyperParams::manual(kind, inputs, &cfg.lena_manual())?,
        };
        return Ok(Plan::Lena(hp.with_budget(budget)));
    }
    let eta = m.eta.unwrap_or_default();
    let b = m.mini_batch.unwrap_or_default();
    Ok(Plan::Baseline(match cfg.algorithm.name {
        Algorithm::Sgd => BaselineParams::sgd(eta, b, eps, budget),
        Algorithm::PerturbedSgd => BaselineParams::perturbed_sgd(
            eta,
            b,
            m.radius.unwrap_or_default(),
            m.period.unwrap_or(DEFAULT_PERIOD),
            eps,
            budget,
        ),
        Algorithm::Spider => BaselineParams::plain_spider(
            eta,
            m.big_batch.unwrap_or_default(),
            b,
            m.loop_len.unwrap_or_default(),
            eps,
            budget,
        ),
        Algorithm::LenaSpider | Algorithm::LenaStorm => unreachable!("handled above"),
    }))
}

/// Builds the instance, start point and hyperparameters of a configuration.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let instance = Instance::build(&cfg.problem)?;
    let start = instance.start(&cfg.problem)?;
    let inputs = problem_inputs(cfg, instance.problem(), &start)?;
    let plan = plan(cfg, &inputs)?;
    Ok(Prepared { instance, start, inputs, plan })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrialStatus {
    Converged,
    BudgetExhausted,
    Failed,
}

impl From<RunStatus> for TrialStatus {
    fn from(s: RunStatus) -> Self {
        match s {
            RunStatus::Converged => TrialStatus::Converged,
            RunStatus::BudgetExhausted => TrialStatus::BudgetExhausted,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub algorithm: Algorithm,
    pub mode: ParamMode,
    pub seed: u64,
    pub status: TrialStatus,
    /// `F` at the returned point.
    pub final_objective: Option<f64>,
    /// Matrix sensing only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_error: Option<f64>,
    pub sgrad_evals: u64,
    pub steps: u64,
    pub epochs: u64,
    pub escape_rows: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate: Option<Certificate>,
    pub wall_time_s: f64,
    pub trace_file: Option<PathBuf>,
    pub x_out: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub trials: usize,
    pub converged: usize,
    pub budget_exhausted: usize,
    pub failed: usize,
    pub certified: usize,
    pub median_final_objective: Option<f64>,
    pub median_relative_error: Option<f64>,
    pub median_sgrad_evals: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub algorithm: Algorithm,
    pub aggregate: Aggregate,
    pub trials: Vec<SummaryRecord>,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    v.retain(|x| x.is_finite());
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

impl Aggregate {
    pub fn of(trials: &[SummaryRecord]) -> Self {
        let count = |s: TrialStatus| trials.iter().filter(|t| t.status == s).count();
        Self {
            trials: trials.len(),
            converged: count(TrialStatus::Converged),
            budget_exhausted: count(TrialStatus::BudgetExhausted),
            failed: count(TrialStatus::Failed),
            certified: trials.iter().filter(|t| t.certificate.as_ref().is_some_and(|c| c.pass)).count(),
            median_final_objective: median(trials.iter().filter_map(|t| t.final_objective).collect()),
            median_relative_error: median(trials.iter().filter_map(|t| t.relative_error).collect()),
            median_sgrad_evals: median(trials.iter().map(|t| t.sgrad_evals as f64).collect()),
        }
    }
}

/// One trial's results; the trace is kept for in-process callers.
#[derive(Clone, Debug)]
pub struct Trial {
    pub summary: SummaryRecord,
    pub trace: Vec<TraceRecord>,
}

pub fn trace_file_name(algorithm: Algorithm, seed: u64) -> String {
    format!("trace_{algorithm}_seed{seed}.csv")
}

/// Runs one seed without touching the filesystem.
pub fn run_trial(cfg: &RunConfig, prepared: &Prepared, seed: u64) -> Trial {
    let started = Instant::now();
    let problem = prepared.instance.problem();
    let mut rng = lena::stream(seed);
    let opts = TraceOptions { log_every: cfg.run.log_every, estimator_error: cfg.run.estimator_error };
    let outcome = match &prepared.plan {
        Plan::Lena(hp) => lena_run(problem, hp, &prepared.start, &mut rng, &opts),
        Plan::Baseline(bp) => baseline_run(problem, bp, &prepared.start, &mut rng, &opts),
    };
    let mut summary = SummaryRecord {
        algorithm: cfg.algorithm.name,
        mode: cfg.algorithm.mode,
        seed,
        status: TrialStatus::Failed,
        final_objective: None,
        relative_error: None,
        sgrad_evals: 0,
        steps: 0,
        epochs: 0,
        escape_rows: 0,
        certificate: None,
        wall_time_s: 0.0,
        trace_file: None,
        x_out: Vec::new(),
        error: None,
    };
    let trace = match outcome {
        Ok(out) => {
            fill(&mut summary, cfg, prepared, &out);
            out.trace
        }
        Err(e) => {
            summary.error = Some(e.to_string());
            Vec::new()
        }
    };
    summary.wall_time_s = started.elapsed().as_secs_f64();
    Trial { summary, trace }
}

fn fill(s: &mut SummaryRecord, cfg: &RunConfig, prepared: &Prepared, out: &RunOutcome) {
    let problem = prepared.instance.problem();
    s.status = out.status.into();
    s.sgrad_evals = out.sgrad_evals;
    s.final_objective = problem.full_value(&out.x_out).ok();
    s.relative_error = prepared.instance.relative_error(&out.x_out);
    s.x_out = out.x_out.iter().copied().collect();
    if let Some(last) = out.trace.last() {
        s.steps = last.step;
        s.epochs = last.epoch;
    }
    s.escape_rows = out.trace.iter().filter(|r| r.phase == lena::Phase::Escape).count() as u64;
    if cfg.run.certify {
        let eps = cfg.run.cert_grad_factor * cfg.targets.eps;
        match certify(problem, &out.x_out, eps, cfg.targets.eps_h, cfg.run.cert_tol) {
            Ok(c) => s.certificate = Some(c),
            Err(e) => s.error = Some(format!("certification failed: {e}")),
        }
    }
}

/// Writes a trace as CSV: header row with the record field names, LF endings.
pub fn write_trace<W: Write>(w: W, trace: &[TraceRecord]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).has_headers(false).from_writer(w);
    wtr.write_record(TRACE_COLUMNS)?;
    for r in trace {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Column order of trace files.
pub const TRACE_COLUMNS: [&str; 13] = [
    "step",
    "epoch",
    "phase",
    "sgrad_evals_cum",
    "eta_used",
    "d_norm",
    "step_norm",
    "movement_sq_cum",
    "shrink_triggered",
    "F_full",
    "grad_norm_full",
    "estimator_error",
    "mode",
];

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Runs every seed of `cfg` (in parallel when `run.threads` allows) and
/// writes traces, `summary.json` and the effective config to `run.out_dir`.
pub fn run_experiment(cfg: &RunConfig) -> Result<Summary> {
    let prepared = prepare(cfg)?;
    let out_dir = &cfg.run.out_dir;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join(CONFIG_FILE), cfg.to_toml()?)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run.threads)
        .build()
        .map_err(|e| HarnessError::Runtime(format!("cannot start worker pool: {e}")))?;
    let trials: Vec<SummaryRecord> = pool.install(|| {
        cfg.run
            .seeds
            .par_iter()
            .map(|&seed| {
                let trial = run_trial(cfg, &prepared, seed);
                let mut summary = trial.summary;
                if summary.status != TrialStatus::Failed {
                    let path = out_dir.join(trace_file_name(cfg.algorithm.name, seed));
                    let written = fs::File::create(&path)
                        .map_err(HarnessError::from)
                        .and_then(|f| write_trace(std::io::BufWriter::new(f), &trial.trace));
                    match written {
                        Ok(()) => summary.trace_file = Some(path),
                        Err(e) => {
                            summary.status = TrialStatus::Failed;
                            summary.error = Some(format!("writing trace: {e}"));
                        }
                    }
                }
                summary
            })
            .collect()
    });

    let summary = Summary { algorithm: cfg.algorithm.name, aggregate: Aggregate::of(&trials), trials };
    let file = fs::File::create(out_dir.join(SUMMARY_FILE))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &summary)?;
    Ok(summary)
}

/// Reads a point: a JSON array, a JSON object with an `x_out` array (as in a
/// summary record), or numbers separated by whitespace or commas.
pub fn read_point(path: &Path) -> Result<Vector> {
    let text = fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("cannot read point file {}: {e}", path.display())))?;
    let trimmed = text.trim_start();
    let values: Vec<f64> = if trimmed.starts_with('[') {
        serde_json::from_str(&text)?
    } else if trimmed.starts_with('{') {
        #[derive(Deserialize)]
        struct WithPoint {
            x_out: Vec<f64>,
        }
        serde_json::from_str::<WithPoint>(&text)?.x_out
    } else {
        text.split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>().map_err(|e| HarnessError::Config(format!("bad number `{t}` in point file: {e}"))))
            .collect::<Result<_>>()?
    };
    Ok(Vector::from_vec(values))
}

/// Certifies `x` against the configured targets.
pub fn certify_point(cfg: &RunConfig, instance: &Instance, x: &Vector) -> Result<Certificate> {
    let problem = instance.problem();
    if x.len() != problem.dim() {
        return Err(HarnessError::Config(format!("point has {} entries, expected {}", x.len(), problem.dim())));
    }
    let eps = cfg.run.cert_grad_factor * cfg.targets.eps;
    Ok(certify(problem, x, eps, cfg.targets.eps_h, cfg.run.cert_tol)?)
}
