//! Run configuration.
//!
//! Configs are TOML documents with the sections `[problem]`, `[algorithm]`,
//! `[targets]`, `[constants]`, `[manual]` and `[run]`. Every section rejects
//! unknown keys so a misspelled hyperparameter is an error, not a default.
//!
//! ```toml
//! [problem]
//! kind = "matrix_sensing"   # or "saddle_quartic"
//! d = 50
//! r = 3
//! n = 1000
//! seed = 7
//!
//! [algorithm]
//! name = "lena-spider"      # lena-storm, sgd, psgd, spider
//! mode = "manual"           # or "theorem" (lena-* only)
//!
//! [targets]
//! eps = 0.02
//! eps_h = 0.1
//! delta = 0.1
//!
//! [manual]
//! eta = 0.003
//! # ...
//!
//! [run]
//! budget = 50000000
//! seeds = [0, 1, 2]
//! out_dir = "out"
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lena::{EstimatorKind, ManualParams, ParamMode};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Algorithm {
    LenaSpider,
    LenaStorm,
    Sgd,
    PerturbedSgd,
    Spider,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] =
        [Algorithm::LenaSpider, Algorithm::LenaStorm, Algorithm::Sgd, Algorithm::PerturbedSgd, Algorithm::Spider];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::LenaSpider => "lena-spider",
            Algorithm::LenaStorm => "lena-storm",
            Algorithm::Sgd => "sgd",
            Algorithm::PerturbedSgd => "psgd",
            Algorithm::Spider => "spider",
        }
    }

    /// Estimator driven by the perturbed two-phase method, if any.
    pub fn lena_kind(self) -> Option<EstimatorKind> {
        match self {
            Algorithm::LenaSpider => Some(EstimatorKind::Spider),
            Algorithm::LenaStorm => Some(EstimatorKind::Storm),
            _ => None,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Algorithm::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            let names: Vec<_> = Algorithm::ALL.iter().map(|a| a.name()).collect();
            format!("unknown algorithm `{s}` (expected one of {})", names.join(", "))
        })
    }
}

impl TryFrom<String> for Algorithm {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<Algorithm> for String {
    fn from(a: Algorithm) -> String {
        a.name().to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    MatrixSensing {
        d: usize,
        r: usize,
        n: usize,
        seed: u64,
        /// Initial scale; defaults to `0.1·√λ_max(M*)/‖ũ₀‖`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha: Option<f64>,
        /// Seed of the rank-deficient start.
        #[serde(default = "default_init_seed")]
        init_seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        start: Option<Vec<f64>>,
    },
    SaddleQuartic {
        dim: usize,
        #[serde(default = "default_lambda_min")]
        lambda_min: f64,
        /// Full spectrum; overrides `dim` and `lambda_min`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eigenvalues: Option<Vec<f64>>,
        #[serde(default = "default_domain_radius")]
        domain_radius: f64,
        #[serde(default)]
        noise_sigma: f64,
        #[serde(default = "default_noise_components")]
        noise_components: usize,
        #[serde(default)]
        noise_seed: u64,
        /// Defaults to the origin.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        start: Option<Vec<f64>>,
    },
}

fn default_init_seed() -> u64 {
    1
}

fn default_lambda_min() -> f64 {
    -1.0
}

fn default_domain_radius() -> f64 {
    2.0
}

fn default_noise_components() -> usize {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSection {
    pub name: Algorithm,
    #[serde(default = "default_mode")]
    pub mode: ParamMode,
}

fn default_mode() -> ParamMode {
    ParamMode::Manual
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Targets {
    pub eps: f64,
    pub eps_h: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_delta() -> f64 {
    0.1
}

/// Problem constant overrides; missing values come from the instance when
/// `estimate` is set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoothness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hessian_lipschitz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_gap: Option<f64>,
    #[serde(default)]
    pub estimate: bool,
}

impl ConstantsSection {
    fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

/// Directly supplied hyperparameters. Which keys are required depends on the
/// algorithm; see [`RunConfig::validate`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManualSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_thres: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dbar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub big_batch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mini_batch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loop_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub storm_weight: Option<f64>,
    /// Steps between perturbations of the perturbed SGD baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<u64>,
}

impl ManualSection {
    fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub budget: u64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Cadence of objective logging; 0 disables it.
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    /// Record the estimator error on every row (needs full gradients).
    #[serde(default)]
    pub estimator_error: bool,
    /// Worker threads; 0 means one per available core.
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub certify: bool,
    /// Gradient target of the certificate as a multiple of `eps`.
    #[serde(default = "default_cert_grad_factor")]
    pub cert_grad_factor: f64,
    #[serde(default = "default_cert_tol")]
    pub cert_tol: f64,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_log_every() -> u64 {
    10
}

fn default_cert_grad_factor() -> f64 {
    2.0
}

fn default_cert_tol() -> f64 {
    1e-7
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub algorithm: AlgorithmSection,
    pub targets: Targets,
    #[serde(default, skip_serializing_if = "ConstantsSection::is_empty")]
    pub constants: ConstantsSection,
    #[serde(default, skip_serializing_if = "ManualSection::is_empty")]
    pub manual: ManualSection,
    pub run: RunSection,
}

/// Command-line overrides applied on top of a config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub algorithm: Option<Algorithm>,
    /// First trial seed.
    pub seed: Option<u64>,
    /// Number of trials, with consecutive seeds.
    pub seeds: Option<u64>,
    pub budget: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub log_every: Option<u64>,
    pub mode: Option<ParamMode>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(a) = o.algorithm {
            self.algorithm.name = a;
        }
        if let Some(m) = o.mode {
            self.algorithm.mode = m;
        }
        match (o.seed, o.seeds) {
            (Some(s), Some(k)) => self.run.seeds = (s..s + k).collect(),
            (Some(s), None) => self.run.seeds = vec![s],
            (None, Some(k)) => {
                let first = self.run.seeds.first().copied().unwrap_or(0);
                self.run.seeds = (first..first + k).collect();
            }
            (None, None) => {}
        }
        if let Some(b) = o.budget {
            self.run.budget = b;
        }
        if let Some(d) = &o.out_dir {
            self.run.out_dir = d.clone();
        }
        if let Some(l) = o.log_every {
            self.run.log_every = l;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        let t = &self.targets;
        if !(t.eps > 0.0 && t.eps_h > 0.0) {
            return bad("targets.eps and targets.eps_h must be positive".into());
        }
        if !(t.delta > 0.0 && t.delta < 1.0) {
            return bad(format!("targets.delta must lie in (0, 1), got {}", t.delta));
        }
        if self.run.seeds.is_empty() {
            return bad("run.seeds must not be empty".into());
        }
        if !(self.run.cert_grad_factor > 0.0 && self.run.cert_tol > 0.0) {
            return bad("run.cert_grad_factor and run.cert_tol must be positive".into());
        }
        let algo = self.algorithm.name;
        match self.algorithm.mode {
            ParamMode::Theorem => {
                if algo.lena_kind().is_none() {
                    return bad(format!("theorem mode is only defined for lena-spider and lena-storm, not {algo}"));
                }
                if !self.constants.estimate {
                    for (key, v) in [
                        ("sigma", self.constants.sigma),
                        ("smoothness", self.constants.smoothness),
                        ("hessian_lipschitz", self.constants.hessian_lipschitz),
                        ("value_gap", self.constants.value_gap),
                    ] {
                        if v.is_none() {
                            return bad(format!("theorem mode needs constants.{key} (or constants.estimate = true)"));
                        }
                    }
                }
            }
            ParamMode::Manual => {
                for key in self.required_manual_keys() {
                    if !self.manual_has(key) {
                        return bad(format!("manual mode for {algo} is missing manual.{key}"));
                    }
                }
            }
        }
        Ok(())
    }

    fn required_manual_keys(&self) -> &'static [&'static str] {
        match self.algorithm.name {
            Algorithm::LenaSpider => {
                &["eta", "eta_h", "radius", "t_thres", "dbar", "big_batch", "mini_batch", "loop_len"]
            }
            Algorithm::LenaStorm => {
                &["eta", "eta_h", "radius", "t_thres", "dbar", "big_batch", "mini_batch", "storm_weight"]
            }
            Algorithm::Sgd => &["eta", "mini_batch"],
            Algorithm::PerturbedSgd => &["eta", "mini_batch", "radius"],
            Algorithm::Spider => &["eta", "big_batch", "mini_batch", "loop_len"],
        }
    }

    fn manual_has(&self, key: &str) -> bool {
        let m = &self.manual;
        match key {
            "eta" => m.eta.is_some(),
            "eta_h" => m.eta_h.is_some(),
            "radius" => m.radius.is_some(),
            "t_thres" => m.t_thres.is_some(),
            "dbar" => m.dbar.is_some(),
            "big_batch" => m.big_batch.is_some(),
            "mini_batch" => m.mini_batch.is_some(),
            "loop_len" => m.loop_len.is_some(),
            "storm_weight" => m.storm_weight.is_some(),
            _ => false,
        }
    }

    /// Manual hyperparameters of a perturbed run; call after [`validate`](Self::validate).
    pub fn lena_manual(&self) -> ManualParams {
        let m = &self.manual;
        ManualParams {
            eta: m.eta.unwrap_or_default(),
            eta_h: m.eta_h.unwrap_or_default(),
            radius: m.radius.unwrap_or_default(),
            t_thres: m.t_thres.unwrap_or_default(),
            dbar: m.dbar.unwrap_or_default(),
            big_batch: m.big_batch.unwrap_or_default(),
            mini_batch: m.mini_batch.unwrap_or_default(),
            loop_len: m.loop_len.unwrap_or(1),
            storm_weight: m.storm_weight.unwrap_or(1.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[problem]
kind = "saddle_quartic"
dim = 3

[algorithm]
name = "lena-spider"

[targets]
eps = 0.05
eps_h = 0.5

[manual]
eta = 0.001
eta_h = 0.05
radius = 0.01
t_thres = 100
dbar = 1e-5
big_batch = 1
mini_batch = 1
loop_len = 1

[run]
budget = 1000
"#;

    #[test]
    fn parses_with_defaults() {
        let c = RunConfig::from_toml(BASE).unwrap();
        assert_eq!(c.algorithm.mode, ParamMode::Manual);
        assert_eq!(c.run.seeds, vec![0]);
        assert_eq!(c.targets.delta, 0.1);
        match c.problem {
            ProblemSpec::SaddleQuartic { lambda_min, domain_radius, .. } => {
                assert_eq!((lambda_min, domain_radius), (-1.0, 2.0));
            }
            _ => panic!("wrong problem"),
        }
    }

    #[test]
    fn unknown_algorithm() {
        let err = RunConfig::from_toml(&BASE.replace("lena-spider", "lena-neon")).unwrap_err();
        assert!(err.to_string().contains("unknown algorithm"), "{err}");
    }

    #[test]
    fn missing_dbar_is_named() {
        let err = RunConfig::from_toml(&BASE.replace("dbar = 1e-5\n", "")).unwrap_err();
        assert!(err.to_string().contains("dbar"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        for (from, to) in [
            ("eta_h = 0.05", "eta_hh = 0.05"),
            ("budget = 1000", "budget = 1000\nbudgte = 1"),
            ("dim = 3", "dim = 3\nsize = 2"),
        ] {
            assert!(RunConfig::from_toml(&BASE.replace(from, to)).is_err(), "{to}");
        }
    }

    #[test]
    fn theorem_mode_rules() {
        let theorem = BASE.replace("name = \"lena-spider\"", "name = \"sgd\"\nmode = \"theorem\"");
        assert!(RunConfig::from_toml(&theorem).is_err());
        let no_consts = BASE.replace("name = \"lena-spider\"", "name = \"lena-spider\"\nmode = \"theorem\"");
        let err = RunConfig::from_toml(&no_consts).unwrap_err();
        assert!(err.to_string().contains("constants.sigma"), "{err}");
        let est = format!("{no_consts}\n[constants]\nestimate = true\n");
        assert!(RunConfig::from_toml(&est).is_ok());
    }

    #[test]
    fn overrides() {
        let mut c = RunConfig::from_toml(BASE).unwrap();
        c.apply(&Overrides { seed: Some(5), seeds: Some(3), budget: Some(7), ..Default::default() }).unwrap();
        assert_eq!(c.run.seeds, vec![5, 6, 7]);
        assert_eq!(c.run.budget, 7);
        let err = c.apply(&Overrides { algorithm: Some(Algorithm::LenaStorm), ..Default::default() });
        assert!(err.unwrap_err().to_string().contains("storm_weight"));
    }
}
