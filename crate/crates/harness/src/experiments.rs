//! The grid-of-starts robustness run, the obstacle-count timing run and the
//! warm-start iteration comparison.

use std::fmt::Write as _;
use std::str::FromStr;

use obca_core::nlp_mpc::{Mode, WarmStartChoice};
use obca_core::pipeline::{plan_with_profile, Scenario};
use obca_core::vehicle::VehicleState;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{compute_metrics, percent_reduction, CaseResult, MetricsReport};
use crate::scenario::PlannerConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RangeError {
    #[error("expected lo:step:hi, got {0:?}")]
    Syntax(String),
    #[error("step must be positive and hi >= lo")]
    Empty,
}

/// Inclusive range `lo, lo + step, ..., <= hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisRange {
    pub lo: f64,
    pub step: f64,
    pub hi: f64,
}

impl AxisRange {
    pub fn new(lo: f64, step: f64, hi: f64) -> Result<Self, RangeError> {
        if !(step > 0.0 && step.is_finite() && lo.is_finite() && hi >= lo) {
            return Err(RangeError::Empty);
        }
        Ok(Self { lo, step, hi })
    }

    pub fn values(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.lo + i as f64 * self.step).collect()
    }
}

impl FromStr for AxisRange {
    type Err = RangeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| RangeError::Syntax(s.into()))?;
        match parts[..] {
            [v] => Self::new(v, 1.0, v),
            [lo, step, hi] => Self::new(lo, step, hi),
            _ => Err(RangeError::Syntax(s.into())),
        }
    }
}

/// Plans `scenario` with `planner`, replacing the mode.
pub fn run_case(scenario: &Scenario, planner: &PlannerConfig, mode: Mode) -> CaseResult {
    let mut mpc = planner.mpc.clone();
    mpc.mode = mode;
    CaseResult::from_plan(mode, &plan_with_profile(scenario, &planner.grid, &mpc, &planner.profile))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCase {
    pub x: f64,
    pub y: f64,
    pub result: CaseResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: Mode,
    pub failures: usize,
    pub total: usize,
}

impl ModeSummary {
    pub fn failure_rate(&self) -> f64 {
        self.failures as f64 / self.total as f64
    }

    pub fn percent(&self) -> f64 {
        100.0 * self.failure_rate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub x: AxisRange,
    pub y: AxisRange,
    /// Mode-major, then `x`, then `y`.
    pub cases: Vec<GridCase>,
    pub summary: Vec<ModeSummary>,
}

impl GridReport {
    pub fn summary_for(&self, mode: Mode) -> Option<&ModeSummary> {
        self.summary.iter().find(|s| s.mode == mode)
    }

    pub fn cases_for(&self, mode: Mode) -> impl Iterator<Item = &GridCase> {
        self.cases.iter().filter(move |c| c.result.mode == mode)
    }

    /// Failure-rate reduction against Base, in percent. None without a Base
    /// run or when Base never failed.
    pub fn reduction_vs_base(&self, mode: Mode) -> Option<f64> {
        let base = self.summary_for(Mode::Base)?;
        let this = self.summary_for(mode)?;
        (base.failures > 0).then(|| percent_reduction(base.failure_rate(), this.failure_rate()))
    }

    /// Metrics of `mode` and `reference` over the starts where both succeed.
    pub fn paired_metrics(&self, reference: Mode, mode: Mode) -> Option<(MetricsReport, MetricsReport)> {
        let both: Vec<(&CaseResult, &CaseResult)> = self
            .cases_for(reference)
            .zip(self.cases_for(mode))
            .filter(|(a, b)| a.result.succeeded && b.result.succeeded)
            .map(|(a, b)| (&a.result, &b.result))
            .collect();
        let a: Vec<CaseResult> = both.iter().map(|p| p.0.clone()).collect();
        let b: Vec<CaseResult> = both.iter().map(|p| p.1.clone()).collect();
        Some((compute_metrics(&a).ok()?, compute_metrics(&b).ok()?))
    }

    /// Failure rates with the reduction against Base.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<6} {:>10} {:>9} {:>14}", "mode", "failures", "rate", "reduction");
        for s in &self.summary {
            let reduction = match (s.mode, self.reduction_vs_base(s.mode)) {
                (Mode::Base, _) => "-".to_string(),
                (_, Some(r)) => format!("{r:.2}%"),
                (_, None) => "N.A.".to_string(),
            };
            let _ = writeln!(
                out,
                "{:<6} {:>10} {:>8.2}% {:>14}",
                s.mode.name(),
                format!("{}/{}", s.failures, s.total),
                s.percent(),
                reduction
            );
        }
        out
    }
}

/// One plan per grid start per mode, heading zero, goal and scene from
/// `base`. Cases run on the rayon pool and come back in a fixed order.
pub fn run_grid_experiment(
    base: &Scenario,
    x: AxisRange,
    y: AxisRange,
    modes: &[Mode],
    planner: &PlannerConfig,
) -> GridReport {
    let starts: Vec<(f64, f64)> = x
        .values()
        .into_iter()
        .flat_map(|xv| y.values().into_iter().map(move |yv| (xv, yv)))
        .collect();
    let jobs: Vec<(Mode, f64, f64)> = modes
        .iter()
        .flat_map(|&m| starts.iter().map(move |&(xv, yv)| (m, xv, yv)))
        .collect();
    let cases: Vec<GridCase> = jobs
        .par_iter()
        .map(|&(mode, xv, yv)| {
            let mut sc = base.clone();
            sc.x0 = VehicleState::new(xv, yv, 0.0, 0.0);
            GridCase { x: xv, y: yv, result: run_case(&sc, planner, mode) }
        })
        .collect();
    let summary = modes
        .iter()
        .map(|&mode| {
            let of_mode = cases.iter().filter(|c| c.result.mode == mode);
            ModeSummary {
                mode,
                failures: of_mode.clone().filter(|c| !c.result.succeeded).count(),
                total: of_mode.count(),
            }
        })
        .collect();
    GridReport { x, y, cases, summary }
}

/// A named scene for the timing table.
#[derive(Debug, Clone)]
pub struct ScalingCase {
    pub name: String,
    /// Boundary and agent edge counts.
    pub n_oa: usize,
    pub n_ob: usize,
    pub scenario: Scenario,
    pub planner: PlannerConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingEntry {
    pub mode: Mode,
    /// `(t_f, t_t)` in seconds; None when the plan failed.
    pub times: Option<(f64, f64)>,
    pub iterations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub name: String,
    pub n_oa: usize,
    pub n_ob: usize,
    pub entries: Vec<ScalingEntry>,
}

impl ScalingRow {
    /// `t_f` and `t_t` improvement of the last mode over the first, in
    /// percent. None if either failed or only one mode ran.
    pub fn improvement(&self) -> Option<(f64, f64)> {
        if self.entries.len() < 2 {
            return None;
        }
        let (a, b) = (self.entries.first()?.times?, self.entries.last()?.times?);
        Some((percent_reduction(a.0, b.0), percent_reduction(a.1, b.1)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub modes: Vec<Mode>,
    pub rows: Vec<ScalingRow>,
}

impl ScalingReport {
    /// Timing table; failed plans print as N.A. and drop out of the
    /// improvement column.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<24} {:>4} {:>4}", "case", "N_OA", "N_OB");
        for m in &self.modes {
            let _ = write!(out, " {:>10} {:>10}", format!("t_f {}", m.name()), format!("t_t {}", m.name()));
        }
        if self.modes.len() > 1 {
            let _ = write!(out, " {:>10} {:>10}", "impr t_f", "impr t_t");
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{:<24} {:>4} {:>4}", row.name, row.n_oa, row.n_ob);
            for e in &row.entries {
                match e.times {
                    Some((tf, tt)) => {
                        let _ = write!(out, " {:>10.4} {:>10.3}", tf, tt);
                    }
                    None => {
                        let _ = write!(out, " {:>10} {:>10}", "N.A.", "N.A.");
                    }
                }
            }
            if self.modes.len() > 1 {
                match row.improvement() {
                    Some((f, t)) => {
                        let _ = write!(out, " {:>9.2}% {:>9.2}%", f, t);
                    }
                    None => {
                        let _ = write!(out, " {:>10} {:>10}", "N.A.", "N.A.");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

/// `t_f` and `t_t` of every case under every mode.
pub fn run_scaling_experiment(cases: &[ScalingCase], modes: &[Mode]) -> ScalingReport {
    let jobs: Vec<(usize, Mode)> = (0..cases.len()).flat_map(|i| modes.iter().map(move |&m| (i, m))).collect();
    let results: Vec<CaseResult> = jobs
        .par_iter()
        .map(|&(i, mode)| run_case(&cases[i].scenario, &cases[i].planner, mode))
        .collect();
    let rows = cases
        .iter()
        .zip(results.chunks(modes.len().max(1)))
        .map(|(case, results)| ScalingRow {
            name: case.name.clone(),
            n_oa: case.n_oa,
            n_ob: case.n_ob,
            entries: results
                .iter()
                .map(|r| ScalingEntry {
                    mode: r.mode,
                    times: r.timings.filter(|_| r.succeeded).map(|t| (t.per_frame, t.total)),
                    iterations: r.iterations,
                })
                .collect(),
        })
        .collect();
    ScalingReport { modes: modes.to_vec(), rows }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmStartComparison {
    pub names: Vec<String>,
    /// MPC iterations with the temporal and dual warm starts.
    pub warm: Vec<usize>,
    /// MPC iterations with the naive profile and constant duals.
    pub cold: Vec<usize>,
}

impl WarmStartComparison {
    pub fn median_warm(&self) -> f64 {
        median(&self.warm)
    }

    pub fn median_cold(&self) -> f64 {
        median(&self.cold)
    }
}

pub fn median(values: &[usize]) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable();
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2] as f64,
        n => (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0,
    }
}

/// MPC iteration counts of `mode` with full and with cold warm starts. A plan
/// that fails before the MPC counts as `max_iter`.
pub fn compare_warm_starts(cases: &[(String, Scenario, PlannerConfig)], mode: Mode) -> WarmStartComparison {
    let run = |choice: WarmStartChoice| -> Vec<usize> {
        cases
            .par_iter()
            .map(|(_, sc, planner)| {
                let mut p = planner.clone();
                p.mpc.warm_start = choice;
                run_case(sc, &p, mode).iterations.unwrap_or(p.mpc.max_iter)
            })
            .collect()
    };
    WarmStartComparison {
        names: cases.iter().map(|c| c.0.clone()).collect(),
        warm: run(WarmStartChoice::Full),
        cold: run(WarmStartChoice::Cold),
    }
}
