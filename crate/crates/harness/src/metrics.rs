//! Per-case summaries and smoothness statistics.

use obca_core::nlp_mpc::{Mode, SolveStatus};
use obca_core::pipeline::{PlanError, PlanResult, StageTimings};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no successful cases to summarize")]
    NoSuccessfulCases,
}

/// What an experiment keeps from one plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub mode: Mode,
    pub succeeded: bool,
    pub status: Option<SolveStatus>,
    /// Failed stage or audit finding.
    pub failure: Option<String>,
    pub iterations: Option<usize>,
    pub dt: f64,
    pub steering: Vec<f64>,
    pub acceleration: Vec<f64>,
    pub timings: Option<StageTimings>,
}

impl CaseResult {
    pub fn from_plan(mode: Mode, plan: &Result<PlanResult, PlanError>) -> Self {
        match plan {
            Ok(r) => {
                let failure = if r.succeeded() {
                    None
                } else if r.status != SolveStatus::Optimal {
                    Some(format!("mpc: {:?}", r.status))
                } else {
                    Some(audit_summary(r))
                };
                Self {
                    mode,
                    succeeded: r.succeeded(),
                    status: Some(r.status),
                    failure,
                    iterations: Some(r.trajectory.report.iterations),
                    dt: r.trajectory.dt,
                    steering: r.trajectory.controls.iter().map(|c| c.steering).collect(),
                    acceleration: r.trajectory.controls.iter().map(|c| c.acceleration).collect(),
                    timings: Some(r.timings),
                }
            }
            Err(e) => Self {
                mode,
                succeeded: false,
                status: None,
                failure: Some(format!("{}: {e}", e.stage())),
                iterations: None,
                dt: 0.0,
                steering: Vec::new(),
                acceleration: Vec::new(),
                timings: None,
            },
        }
    }

    /// `(a(k) - a(k-1)) / dt` for `k >= 1`.
    pub fn jerk(&self) -> Vec<f64> {
        jerk(&self.acceleration, self.dt)
    }
}

fn audit_summary(r: &PlanResult) -> String {
    let a = &r.audit;
    format!(
        "audit: {} dynamics, {} limit, {} collision, {} certificate violations",
        a.dynamics_violations.len(),
        a.limit_violations.len(),
        a.collisions.len(),
        a.certificate_violations.len()
    )
}

pub fn jerk(acceleration: &[f64], dt: f64) -> Vec<f64> {
    acceleration.windows(2).map(|w| (w[1] - w[0]) / dt).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub max: f64,
    pub min: f64,
    /// Population standard deviation.
    pub std_dev: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Self {
            mean,
            max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            min: values.iter().cloned().fold(f64::INFINITY, f64::min),
            std_dev: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cases: usize,
    pub successes: usize,
    pub failures: usize,
    /// Over `|delta|` of every control of every successful case.
    pub steering: Stats,
    /// Over `|a|`.
    pub acceleration: Stats,
    /// Over `|jerk|`.
    pub jerk: Stats,
    /// Mean stage timings of the successful cases.
    pub timings: StageTimings,
}

/// Statistics over the successful cases only.
pub fn compute_metrics(results: &[CaseResult]) -> Result<MetricsReport, MetricsError> {
    let ok: Vec<&CaseResult> = results.iter().filter(|r| r.succeeded).collect();
    if ok.is_empty() {
        return Err(MetricsError::NoSuccessfulCases);
    }
    let abs = |f: &dyn Fn(&CaseResult) -> Vec<f64>| -> Vec<f64> {
        ok.iter().flat_map(|r| f(r)).map(f64::abs).collect()
    };
    let steering = abs(&|r| r.steering.clone());
    let acceleration = abs(&|r| r.acceleration.clone());
    let jerk = abs(&|r| r.jerk());
    let zero = Stats { mean: 0.0, max: 0.0, min: 0.0, std_dev: 0.0 };
    let mut timings = StageTimings::default();
    let n = ok.len() as f64;
    for t in ok.iter().filter_map(|r| r.timings) {
        timings.coarse_search += t.coarse_search / n;
        timings.temporal_profile += t.temporal_profile / n;
        timings.dual_warm_start += t.dual_warm_start / n;
        timings.mpc += t.mpc / n;
        timings.total += t.total / n;
        timings.per_frame += t.per_frame / n;
    }
    Ok(MetricsReport {
        cases: results.len(),
        successes: ok.len(),
        failures: results.len() - ok.len(),
        steering: Stats::of(&steering).unwrap_or(zero),
        acceleration: Stats::of(&acceleration).unwrap_or(zero),
        jerk: Stats::of(&jerk).unwrap_or(zero),
        timings,
    })
}

/// `100 (1 - b / a)`: how much smaller `b` is than the reference `a`.
pub fn percent_reduction(a: f64, b: f64) -> f64 {
    100.0 * (1.0 - b / a)
}

/// Percent reductions of the steering, acceleration and jerk means from `a`
/// to `b`.
pub fn compare_metrics(a: &MetricsReport, b: &MetricsReport) -> [f64; 3] {
    [
        percent_reduction(a.steering.mean, b.steering.mean),
        percent_reduction(a.acceleration.mean, b.acceleration.mean),
        percent_reduction(a.jerk.mean, b.jerk.mean),
    ]
}
