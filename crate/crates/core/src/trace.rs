use serde::{Deserialize, Serialize};

use crate::params::ParamMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Phase {
    /// Initial big batch at the starting point; no movement.
    Init,
    Gd,
    Perturb,
    Escape,
}

/// One row per move `x_t → x_{t+1}`.
///
/// `eta_used`, `d_norm` and `step_norm` describe the move itself (`d_norm` is
/// the norm of the estimate that drove it). `F_full`, `grad_norm_full` and
/// `estimator_error` describe the state after the move, at `x_{t+1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Index of the iterate after the move.
    pub step: u64,
    pub epoch: u64,
    pub phase: Phase,
    pub sgrad_evals_cum: u64,
    pub eta_used: f64,
    pub d_norm: f64,
    pub step_norm: f64,
    /// Squared movement accumulated since the last perturbation.
    pub movement_sq_cum: f64,
    pub shrink_triggered: u8,
    #[serde(rename = "F_full")]
    pub f_full: Option<f64>,
    pub grad_norm_full: Option<f64>,
    pub estimator_error: Option<f64>,
    pub mode: ParamMode,
}

impl TraceRecord {
    pub fn triggered(&self) -> bool {
        self.shrink_triggered != 0
    }
}
