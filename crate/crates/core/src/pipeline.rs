//! End-to-end planning: coarse search, gear partition, speed profile, dual
//! warm start and the MPC.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dual_warm_start::{
    build_relaxed_dual_qp, scale_to_feasible, solve_dual_warm_start, DualError, DualWarmStart,
};
use crate::geometry::{
    polygon_distance, segment_to_obstacle, ConvexObstacle, GeometryError, Point2, VehicleFootprint,
};
use crate::grid_search::{
    partition_by_gear, plan_coarse_path, CoarsePathPoint, Gear, GridConfig, GridSearchError,
};
use crate::nlp_mpc::{
    build_mpc, solve_mpc, verify_solution, AuditReport, Mode, MpcConfig, MpcError, MpcSolution,
    SolveStatus,
};
use crate::speed_profile::{temporal_warm_start, ProfileConfig, SpeedProfileError, WarmStartTrajectory};
use crate::vehicle::{VehicleLimits, VehicleState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub obstacles: Vec<ConvexObstacle>,
    /// Boundary lines, thickened into rectangles of `boundary_thickness`.
    pub boundary_segments: Vec<(Point2, Point2)>,
    pub boundary_thickness: f64,
    pub x0: VehicleState,
    pub x_f: VehicleState,
    pub footprint: VehicleFootprint,
    pub limits: VehicleLimits,
    /// Search region for the coarse planner; derived from the scene if absent.
    pub region: Option<(Point2, Point2)>,
}

impl Scenario {
    /// Boundary rectangles followed by the listed obstacles.
    pub fn all_obstacles(&self) -> Result<Vec<ConvexObstacle>, GeometryError> {
        let mut out = Vec::with_capacity(self.boundary_segments.len() + self.obstacles.len());
        for &(a, b) in &self.boundary_segments {
            out.push(segment_to_obstacle(a, b, self.boundary_thickness)?);
        }
        out.extend(self.obstacles.iter().cloned());
        Ok(out)
    }

    pub fn validate(&self) -> Result<Vec<ConvexObstacle>, PlanError> {
        let obstacles = self.all_obstacles().map_err(|e| PlanError::InvalidScenario(e.to_string()))?;
        if !self.limits.is_valid() {
            return Err(PlanError::InvalidScenario("invalid vehicle limits".into()));
        }
        for (name, s) in [("start", &self.x0), ("goal", &self.x_f)] {
            let body = self.footprint.at(s);
            if let Some(i) = obstacles.iter().position(|o| polygon_distance(&body, o) <= 0.0) {
                return Err(PlanError::InvalidScenario(format!("{name} pose collides with obstacle {i}")));
            }
        }
        Ok(obstacles)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("coarse search failed: {0}")]
    CoarseSearchFailed(GridSearchError),
    #[error("speed profile failed: {0}")]
    ProfileFailed(SpeedProfileError),
    #[error("dual warm start failed: {0}")]
    DualWarmStartFailed(DualError),
    #[error("MPC failed: {0}")]
    MpcFailed(MpcError),
}

impl PlanError {
    pub fn stage(&self) -> &'static str {
        match self {
            PlanError::InvalidScenario(_) => "scenario",
            PlanError::CoarseSearchFailed(_) => "coarse_search",
            PlanError::ProfileFailed(_) => "temporal_profile",
            PlanError::DualWarmStartFailed(_) => "dual_warm_start",
            PlanError::MpcFailed(_) => "mpc",
        }
    }
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub coarse_search: f64,
    pub temporal_profile: f64,
    pub dual_warm_start: f64,
    pub mpc: f64,
    /// Whole plan, `t_t`.
    pub total: f64,
    /// `total / K`, the mean time per trajectory frame, `t_f`.
    pub per_frame: f64,
}

impl StageTimings {
    pub fn stage_sum(&self) -> f64 {
        self.coarse_search + self.temporal_profile + self.dual_warm_start + self.mpc
    }
}

/// Half-open range of state indices driven in one gear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GearRange {
    pub gear: Gear,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub mode: Mode,
    pub status: SolveStatus,
    pub trajectory: MpcSolution,
    pub gear_partitions: Vec<GearRange>,
    pub timings: StageTimings,
    pub coarse_path: Vec<CoarsePathPoint>,
    pub warm_start: WarmStartTrajectory,
    pub audit: AuditReport,
}

impl PlanResult {
    /// Optimal and clean under the independent audit.
    pub fn succeeded(&self) -> bool {
        self.status == SolveStatus::Optimal && self.audit.is_clean()
    }
}

/// Gear by the sign of `v`; zero-speed points join the segment after them.
pub fn partition_trajectory(sol: &MpcSolution) -> Vec<GearRange> {
    partition_states(&sol.states)
}

/// [`partition_trajectory`] on a bare state sequence.
pub fn partition_states(states: &[VehicleState]) -> Vec<GearRange> {
    let n = states.len();
    let mut gears: Vec<Option<Gear>> = states
        .iter()
        .map(|s| {
            if s.v > 0.0 {
                Some(Gear::Forward)
            } else if s.v < 0.0 {
                Some(Gear::Reverse)
            } else {
                None
            }
        })
        .collect();
    let mut next = None;
    for g in gears.iter_mut().rev() {
        match g {
            Some(_) => next = *g,
            None => *g = next,
        }
    }
    let mut prev = None;
    for g in gears.iter_mut() {
        match g {
            Some(_) => prev = *g,
            None => *g = prev.or(Some(Gear::Forward)),
        }
    }
    let mut out: Vec<GearRange> = Vec::new();
    for (i, g) in gears.into_iter().enumerate() {
        let g = g.unwrap_or(Gear::Forward);
        match out.last_mut() {
            Some(r) if r.gear == g => r.end = i + 1,
            _ => out.push(GearRange { gear: g, start: i, end: i + 1 }),
        }
    }
    debug_assert!(out.last().is_none_or(|r| r.end == n));
    out
}

/// Plans with the default speed-profile settings.
pub fn plan(scenario: &Scenario, grid: &GridConfig, mpc: &MpcConfig) -> Result<PlanResult, PlanError> {
    plan_with_profile(scenario, grid, mpc, &ProfileConfig::default())
}

pub fn plan_with_profile(
    scenario: &Scenario,
    grid: &GridConfig,
    mpc: &MpcConfig,
    profile: &ProfileConfig,
) -> Result<PlanResult, PlanError> {
    let total_start = Instant::now();
    mpc.validate().map_err(PlanError::MpcFailed)?;
    let obstacles = scenario.validate()?;
    let (fp, limits) = (&scenario.footprint, &scenario.limits);

    let t = Instant::now();
    let coarse = plan_coarse_path(&obstacles, fp, &scenario.x0, &scenario.x_f, limits, grid, scenario.region)
        .map_err(PlanError::CoarseSearchFailed)?;
    let segments = partition_by_gear(&coarse).map_err(PlanError::CoarseSearchFailed)?;
    let coarse_search = t.elapsed().as_secs_f64();

    let full = mpc.uses_full_warm_start();
    let t = Instant::now();
    let warm = temporal_warm_start(&segments, limits, mpc.steps, profile, !full).map_err(PlanError::ProfileFailed)?;
    let temporal_profile = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let duals = if obstacles.is_empty() {
        DualWarmStart::constant(mpc.cold_dual, &warm.states[1..], &obstacles, fp)
    } else if full {
        dual_warm_start(&warm.states[1..], &obstacles, fp, mpc.dual_beta).map_err(PlanError::DualWarmStartFailed)?
    } else {
        DualWarmStart::constant(mpc.cold_dual, &warm.states[1..], &obstacles, fp)
    };
    let dual_time = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let nlp = build_mpc(&scenario.x0, &scenario.x_f, &warm, Some(&duals), &obstacles, fp, limits, mpc)
        .map_err(PlanError::MpcFailed)?;
    let trajectory = solve_mpc(&nlp);
    let mpc_time = t.elapsed().as_secs_f64();

    let audit = verify_solution(&trajectory, &obstacles, fp, limits, trajectory.dt);
    let gear_partitions = partition_trajectory(&trajectory);
    let total = total_start.elapsed().as_secs_f64();
    Ok(PlanResult {
        mode: mpc.mode,
        status: trajectory.report.status,
        gear_partitions,
        timings: StageTimings {
            coarse_search,
            temporal_profile,
            dual_warm_start: dual_time,
            mpc: mpc_time,
            total,
            per_frame: total / mpc.steps as f64,
        },
        trajectory,
        coarse_path: coarse,
        warm_start: warm,
        audit,
    })
}

/// Relaxed dual QP solved and scaled onto the feasible set.
pub fn dual_warm_start(
    states: &[VehicleState],
    obstacles: &[ConvexObstacle],
    footprint: &VehicleFootprint,
    beta: f64,
) -> Result<DualWarmStart, DualError> {
    let qp = build_relaxed_dual_qp(states, obstacles, footprint, beta)?;
    let raw = solve_dual_warm_start(&qp)?;
    Ok(scale_to_feasible(&raw, obstacles))
}

/// The no-obstacle parking lot: a two-lane road `y in [0, 8]`,
/// `x in [-15, 15]`, with a perpendicular spot below it and the goal in the
/// spot, rear axle first.
pub fn parking_lot(x0: VehicleState) -> Scenario {
    let p = Point2::new;
    let boundary_segments = vec![
        (p(-15.0, 8.0), p(15.0, 8.0)),
        (p(-15.0, 0.0), p(-1.6, 0.0)),
        (p(1.6, 0.0), p(15.0, 0.0)),
        (p(-1.6, 0.0), p(-1.6, -6.0)),
        (p(1.6, -6.0), p(1.6, 0.0)),
        (p(-1.6, -6.0), p(1.6, -6.0)),
    ];
    Scenario {
        obstacles: Vec::new(),
        boundary_segments,
        boundary_thickness: 0.1,
        x0,
        x_f: VehicleState::new(0.0, -4.5, 0.0, std::f64::consts::FRAC_PI_2),
        footprint: VehicleFootprint::new(4.933, 2.11, 1.4235).expect("valid footprint"),
        limits: VehicleLimits::default(),
        region: Some((p(-15.0, -6.0), p(15.0, 8.0))),
    }
}
