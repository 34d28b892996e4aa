#![allow(dead_code)]

use std::path::PathBuf;

use lena::{Phase, TraceRecord};
use lena_harness::RunConfig;

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

pub fn load_config(name: &str) -> RunConfig {
    RunConfig::load(&config_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Movement-budget settings of a perturbed trace.
#[derive(Clone, Copy, Debug)]
pub struct Budget {
    pub dbar: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Audit {
    pub escape_rows: usize,
    pub shrink_violations: usize,
    pub open_triggers: usize,
    pub gd_rows: usize,
    pub gd_violations: usize,
}

impl Audit {
    pub fn merge(&mut self, o: Audit) {
        self.escape_rows += o.escape_rows;
        self.shrink_violations += o.shrink_violations;
        self.open_triggers += o.open_triggers;
        self.gd_rows += o.gd_rows;
        self.gd_violations += o.gd_violations;
    }
}

/// Replays a trace against the escape-phase movement budget, the trigger
/// semantics and the fixed GD movement `eta`.
///
/// The movement sum is recomputed from `eta_used` and `d_norm` rather than
/// read from `movement_sq_cum`, and both must agree within 1e-9.
pub fn audit(trace: &[TraceRecord], eta: f64, budget: Option<Budget>) -> Audit {
    let mut a = Audit::default();
    let mut perturb_step = None;
    let mut sum = 0.0;
    for (i, r) in trace.iter().enumerate() {
        match r.phase {
            Phase::Gd => {
                a.gd_rows += 1;
                if (r.step_norm - eta).abs() > 1e-12 * eta {
                    a.gd_violations += 1;
                }
            }
            Phase::Perturb => {
                perturb_step = Some(r.step);
                sum = 0.0;
                if r.movement_sq_cum != 0.0 {
                    a.shrink_violations += 1;
                }
            }
            Phase::Escape => {
                a.escape_rows += 1;
                sum += r.eta_used * r.eta_used * r.d_norm * r.d_norm;
                let ok = match (budget, perturb_step) {
                    (Some(b), Some(m_s)) => {
                        let k = (r.step - m_s) as f64;
                        sum <= k * b.dbar + 1e-12 && (sum - r.movement_sq_cum).abs() <= 1e-9
                    }
                    _ => false,
                };
                if !ok {
                    a.shrink_violations += 1;
                }
            }
            Phase::Init => {}
        }
        if r.triggered() {
            let closes = r.phase == Phase::Escape
                && trace.get(i + 1).is_none_or(|n| n.epoch == r.epoch + 1 && n.phase != Phase::Escape);
            if !closes {
                a.open_triggers += 1;
            }
        }
    }
    a
}
