//! The OBCA trajectory optimization as a nonlinear program.
//!
//! Decision variables are the states `x(0..=K)`, controls `u(0..K)` and, for
//! every step `k = 1..=K` and obstacle `m`, the dual certificate
//! `(lambda, mu)` plus the slack distance `d` in the reformulated mode. The
//! base mode keeps the hard terminal state and a `>= d_min` certificate
//! instead.

pub mod ipm;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dual_warm_start::{DualBlock, DualWarmStart};
use crate::geometry::{certificate_value, polygon_distance, ConvexObstacle, VehicleFootprint};
use crate::speed_profile::WarmStartTrajectory;
use crate::vehicle::{
    check_limits_with_tolerance, step_dynamics, ControlInput, LimitViolation, VehicleLimits, VehicleState,
};

pub use ipm::{IpmSettings, IpmStatus as SolveStatus, KktResiduals, NlpProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Hard terminal state, `>= d_min` certificates, naive warm start.
    Base,
    /// Base problem with the temporal and dual warm starts.
    Td,
    /// Warm starts plus slack distances and a soft terminal state.
    Tdr,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Base, Mode::Td, Mode::Tdr];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Base => "base",
            Mode::Td => "td",
            Mode::Tdr => "tdr",
        }
    }

    pub fn has_slack(self) -> bool {
        self == Mode::Tdr
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "base" => Ok(Mode::Base),
            "td" => Ok(Mode::Td),
            "tdr" => Ok(Mode::Tdr),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

/// Which warm starts feed the MPC. `Auto` follows the mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WarmStartChoice {
    #[default]
    Auto,
    /// Naive profile and constant duals.
    Cold,
    /// Speed-profile QP and dual QP.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub alpha_x: f64,
    pub alpha_xp: f64,
    pub alpha_u: f64,
    pub alpha_utilde: f64,
    pub alpha_e: f64,
    /// Weight on the slack distances. Each of the `K M` slacks enters with
    /// this weight, so it stays small next to the smoothness terms.
    pub beta: f64,
    /// `beta` of the dual warm-start QP.
    pub dual_beta: f64,
    /// Horizon length `K`.
    pub steps: usize,
    /// Minimum certificate in the base problem (m).
    pub d_min: f64,
    /// Upper bound `d <= -eps_d` on the slack distances.
    pub eps_d: f64,
    pub kkt_tol: f64,
    pub max_iter: usize,
    pub mode: Mode,
    pub warm_start: WarmStartChoice,
    /// Constant `lambda`, `mu` for the cold dual start.
    pub cold_dual: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            alpha_x: 0.0,
            alpha_xp: 1.0,
            alpha_u: 1.0,
            alpha_utilde: 5.0,
            alpha_e: 100.0,
            beta: 0.01,
            dual_beta: 1.0,
            steps: 160,
            d_min: 0.1,
            eps_d: 1e-6,
            kkt_tol: 1e-6,
            max_iter: 500,
            mode: Mode::Tdr,
            warm_start: WarmStartChoice::Auto,
            cold_dual: 0.1,
        }
    }
}

impl MpcConfig {
    pub fn with_mode(mode: Mode) -> Self {
        Self { mode, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), MpcError> {
        let weights = [
            self.alpha_x,
            self.alpha_xp,
            self.alpha_u,
            self.alpha_utilde,
            self.alpha_e,
            self.beta,
        ];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(MpcError::InvalidConfig("weights must be finite and nonnegative".into()));
        }
        if self.mode == Mode::Tdr && !(self.alpha_e > 0.0 && self.beta > 0.0) {
            return Err(MpcError::InvalidConfig("alpha_e and beta must be positive in tdr mode".into()));
        }
        if self.steps < 2 {
            return Err(MpcError::InvalidConfig("need at least two steps".into()));
        }
        if !(self.kkt_tol > 0.0 && self.eps_d > 0.0 && self.d_min >= 0.0 && self.cold_dual > 0.0) {
            return Err(MpcError::InvalidConfig("tolerances must be positive".into()));
        }
        if !(self.dual_beta.is_finite() && self.dual_beta > 0.0) {
            return Err(MpcError::InvalidConfig("dual_beta must be positive".into()));
        }
        Ok(())
    }

    /// Whether this configuration uses the optimized warm starts.
    pub fn uses_full_warm_start(&self) -> bool {
        match self.warm_start {
            WarmStartChoice::Auto => self.mode != Mode::Base,
            WarmStartChoice::Cold => false,
            WarmStartChoice::Full => true,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpcError {
    #[error("invalid MPC config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("mode {0:?} needs a dual warm start")]
    ModeMismatch(Mode),
}

/// Reference `u~` in the control-change term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ControlReference {
    /// `u~(k-1) = u(k-2)`, with `first` standing in before `u(0)`.
    Shifted { first: ControlInput },
    /// Controls of an earlier plan, one per step.
    Previous(Vec<ControlInput>),
}

const NX: usize = 4;
const NU: usize = 2;
const IX: usize = 0;
const IY: usize = 1;
const IV: usize = 2;
const IPHI: usize = 3;

fn state_array(s: &VehicleState) -> [f64; 4] {
    [s.x, s.y, s.v, s.phi]
}

/// Cost of a trajectory; `d` lists the slack distances, empty without them.
pub fn evaluate_cost(
    states: &[VehicleState],
    controls: &[ControlInput],
    d: &[f64],
    config: &MpcConfig,
    x_f: &VehicleState,
    reference: &ControlReference,
) -> Result<f64, MpcError> {
    let k = controls.len();
    if states.len() != k + 1 || k == 0 {
        return Err(MpcError::DimensionMismatch(format!(
            "{} states for {} controls",
            states.len(),
            k
        )));
    }
    if let ControlReference::Previous(prev) = reference {
        if prev.len() != k {
            return Err(MpcError::DimensionMismatch(format!("{} reference controls for {k} steps", prev.len())));
        }
    }
    let sq = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum() };
    let u = |c: &ControlInput| [c.steering, c.acceleration];
    let mut total = 0.0;
    for step in 1..=k {
        let x = state_array(&states[step]);
        let xp = state_array(&states[step - 1]);
        let uc = u(&controls[step - 1]);
        let ut = match reference {
            ControlReference::Shifted { first } if step == 1 => u(first),
            ControlReference::Shifted { .. } => u(&controls[step - 2]),
            ControlReference::Previous(prev) => u(&prev[step - 1]),
        };
        total += config.alpha_x * sq(&x, &[0.0; 4])
            + config.alpha_xp * sq(&x, &xp)
            + config.alpha_u * sq(&uc, &[0.0; 2])
            + config.alpha_utilde * sq(&uc, &ut);
    }
    total += config.alpha_e * sq(&state_array(&states[k]), &state_array(x_f));
    total += config.beta * d.iter().sum::<f64>();
    Ok(total)
}

/// `w (v[a] - v[b] - c)^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct QuadTerm {
    w: f64,
    a: usize,
    b: Option<usize>,
    c: f64,
}

/// Shifts each heading by a multiple of `2 pi` to follow its predecessor.
fn unwrap_headings(states: &mut [VehicleState], start: f64) {
    let mut prev = start;
    for s in states.iter_mut() {
        s.phi = prev + crate::vehicle::angle_diff(s.phi, prev);
        prev = s.phi;
    }
}

/// The assembled program together with its initial point.
#[derive(Debug, Clone)]
pub struct MpcNlp {
    pub config: MpcConfig,
    pub steps: usize,
    pub dt: f64,
    pub x0: VehicleState,
    /// Goal with its heading moved next to the warm start's final heading.
    pub x_f: VehicleState,
    pub reference: ControlReference,
    pub obstacles: Vec<ConvexObstacle>,
    pub footprint: VehicleFootprint,
    pub limits: VehicleLimits,
    pub initial: Vec<f64>,
    x_base: Vec<usize>,
    u_base: Vec<usize>,
    /// First variable of each dual block, index `(k - 1) * M + m`.
    blk_base: Vec<usize>,
    n: usize,
    row_dyn: usize,
    row_rate: usize,
    row_col: usize,
    row_term: Option<usize>,
    rows: usize,
    xl: Vec<f64>,
    xu: Vec<f64>,
    cl: Vec<f64>,
    cu: Vec<f64>,
    quad: Vec<QuadTerm>,
    /// Control-change terms, rebuilt when the reference changes.
    ref_quad: Vec<QuadTerm>,
    linear: Vec<(usize, f64)>,
    jac_pat: Vec<(usize, usize)>,
    hess_pat: Vec<(usize, usize)>,
}

#[allow(clippy::too_many_arguments)]
pub fn build_mpc(
    x0: &VehicleState,
    x_f: &VehicleState,
    warm: &WarmStartTrajectory,
    duals: Option<&DualWarmStart>,
    obstacles: &[ConvexObstacle],
    footprint: &VehicleFootprint,
    limits: &VehicleLimits,
    config: &MpcConfig,
) -> Result<MpcNlp, MpcError> {
    config.validate()?;
    let k = warm.horizon();
    if k != config.steps || warm.states.len() != k + 1 {
        return Err(MpcError::DimensionMismatch(format!(
            "warm start has {} steps and {} states, config asks for {}",
            k,
            warm.states.len(),
            config.steps
        )));
    }
    let m_obs = obstacles.len();
    let mut warm_states = warm.states.clone();
    warm_states[0] = *x0;
    unwrap_headings(&mut warm_states, x0.phi);
    let cold;
    let duals = match duals {
        Some(d) => d,
        None if config.mode == Mode::Base => {
            cold = DualWarmStart::constant(config.cold_dual, &warm_states[1..], obstacles, footprint);
            &cold
        }
        None => return Err(MpcError::ModeMismatch(config.mode)),
    };
    if duals.num_obstacles != m_obs || duals.steps != k {
        return Err(MpcError::DimensionMismatch(format!(
            "duals cover {} obstacles x {} steps, expected {m_obs} x {k}",
            duals.num_obstacles, duals.steps
        )));
    }
    let mut goal = *x_f;
    goal.phi = warm_states[k].phi + crate::vehicle::angle_diff(x_f.phi, warm_states[k].phi);

    let slack = config.mode.has_slack();
    let dt = warm.dt;

    // Variable layout: x(0), then per step u(k-1), dual blocks, x(k).
    let mut x_base = vec![0; k + 1];
    let mut u_base = vec![0; k];
    let mut blk_base = vec![0; k * m_obs];
    let mut n = NX;
    for step in 1..=k {
        u_base[step - 1] = n;
        n += NU;
        for (m, o) in obstacles.iter().enumerate() {
            blk_base[(step - 1) * m_obs + m] = n;
            n += o.num_halfspaces() + 4 + usize::from(slack);
        }
        x_base[step] = n;
        n += NX;
    }

    let mut xl = vec![f64::NEG_INFINITY; n];
    let mut xu = vec![f64::INFINITY; n];
    let mut initial = vec![0.0; n];
    for step in 0..=k {
        let b = x_base[step];
        initial[b..b + NX].copy_from_slice(&state_array(&warm_states[step]));
        if step > 0 {
            xl[b + IV] = limits.speed.lo;
            xu[b + IV] = limits.speed.hi;
        }
    }
    for step in 0..k {
        let b = u_base[step];
        initial[b] = warm.controls[step].steering;
        initial[b + 1] = warm.controls[step].acceleration;
        xl[b] = limits.steering.lo;
        xu[b] = limits.steering.hi;
        xl[b + 1] = limits.acceleration.lo;
        xu[b + 1] = limits.acceleration.hi;
    }
    for step in 1..=k {
        for (m, o) in obstacles.iter().enumerate() {
            let b = blk_base[(step - 1) * m_obs + m];
            let nm = o.num_halfspaces();
            let blk = duals.block(m, step).interior(o, footprint, &warm_states[step], DUAL_MARGIN);
            initial[b..b + nm].copy_from_slice(&blk.lambda);
            initial[b + nm..b + nm + 4].copy_from_slice(&blk.mu);
            for i in b..b + nm + 4 {
                xl[i] = 0.0;
            }
            if slack {
                initial[b + nm + 4] = blk.d;
                xu[b + nm + 4] = -config.eps_d;
            }
        }
    }

    // Rows: initial state, dynamics, steering rate, certificates, terminal.
    let row_dyn = NX;
    let row_rate = row_dyn + NX * k;
    let row_col = row_rate + (k - 1);
    let row_term_start = row_col + 4 * k * m_obs;
    let row_term = (!slack).then_some(row_term_start);
    let rows = row_term_start + if slack { 0 } else { NX };
    let mut cl = vec![0.0; rows];
    let mut cu = vec![0.0; rows];
    for (j, v) in state_array(x0).iter().enumerate() {
        cl[j] = *v;
        cu[j] = *v;
    }
    for r in row_rate..row_col {
        cl[r] = dt * limits.steering_rate.lo;
        cu[r] = dt * limits.steering_rate.hi;
    }
    for blk in 0..k * m_obs {
        let r = row_col + 4 * blk;
        if !slack {
            cl[r] = config.d_min;
            cu[r] = f64::INFINITY;
        }
        cl[r + 3] = f64::NEG_INFINITY;
        cu[r + 3] = 1.0;
    }
    if let Some(rt) = row_term {
        for (j, v) in state_array(&goal).iter().enumerate() {
            cl[rt + j] = *v;
            cu[rt + j] = *v;
        }
    }

    // Cost.
    let mut quad = Vec::new();
    let mut push = |w: f64, a: usize, b: Option<usize>, c: f64| {
        if w > 0.0 {
            quad.push(QuadTerm { w, a, b, c });
        }
    };
    let reference = ControlReference::Shifted { first: warm.controls[0] };
    for step in 1..=k {
        for j in 0..NX {
            push(config.alpha_x, x_base[step] + j, None, 0.0);
            push(config.alpha_xp, x_base[step] + j, Some(x_base[step - 1] + j), 0.0);
        }
        for j in 0..NU {
            push(config.alpha_u, u_base[step - 1] + j, None, 0.0);
        }
    }
    let goal_arr = state_array(&goal);
    for j in 0..NX {
        push(config.alpha_e, x_base[k] + j, None, goal_arr[j]);
    }
    let linear = if slack {
        (0..k * m_obs)
            .map(|blk| {
                let m = blk % m_obs;
                (blk_base[blk] + obstacles[m].num_halfspaces() + 4, config.beta)
            })
            .collect()
    } else {
        Vec::new()
    };

    let mut nlp = MpcNlp {
        config: config.clone(),
        steps: k,
        dt,
        x0: *x0,
        x_f: goal,
        reference,
        obstacles: obstacles.to_vec(),
        footprint: footprint.clone(),
        limits: *limits,
        initial,
        x_base,
        u_base,
        blk_base,
        n,
        row_dyn,
        row_rate,
        row_col,
        row_term,
        rows,
        xl,
        xu,
        cl,
        cu,
        quad,
        ref_quad: Vec::new(),
        linear,
        jac_pat: Vec::new(),
        hess_pat: Vec::new(),
    };
    nlp.rebuild_reference_terms();
    Ok(nlp)
}

impl MpcNlp {
    pub fn num_obstacles(&self) -> usize {
        self.obstacles.len()
    }

    /// Switches the control-change term to follow an earlier plan.
    pub fn with_previous_controls(mut self, previous: Vec<ControlInput>) -> Result<Self, MpcError> {
        if previous.len() != self.steps {
            return Err(MpcError::DimensionMismatch(format!(
                "{} previous controls for {} steps",
                previous.len(),
                self.steps
            )));
        }
        self.reference = ControlReference::Previous(previous);
        self.rebuild_reference_terms();
        Ok(self)
    }

    fn rebuild_reference_terms(&mut self) {
        let w = self.config.alpha_utilde;
        self.ref_quad.clear();
        if w > 0.0 {
            for step in 1..=self.steps {
                let ub = self.u_base[step - 1];
                for j in 0..NU {
                    let pick = |u: &ControlInput| if j == 0 { u.steering } else { u.acceleration };
                    let term = match &self.reference {
                        ControlReference::Shifted { first } if step == 1 => {
                            QuadTerm { w, a: ub + j, b: None, c: pick(first) }
                        }
                        ControlReference::Shifted { .. } => {
                            QuadTerm { w, a: ub + j, b: Some(self.u_base[step - 2] + j), c: 0.0 }
                        }
                        ControlReference::Previous(prev) => {
                            QuadTerm { w, a: ub + j, b: None, c: pick(&prev[step - 1]) }
                        }
                    };
                    self.ref_quad.push(term);
                }
            }
        }
        let probe = self.initial.clone();
        let mut jp = Vec::new();
        self.jacobian_visit(&probe, &mut |r, c, _| jp.push((r, c)));
        let mut hp = Vec::new();
        self.hessian_visit(&probe, 1.0, &vec![1.0; self.rows], &mut |i, j, _| hp.push((i, j)));
        self.jac_pat = jp;
        self.hess_pat = hp;
    }

    fn quad_terms(&self) -> impl Iterator<Item = &QuadTerm> {
        self.quad.iter().chain(&self.ref_quad)
    }

    pub fn state(&self, v: &[f64], step: usize) -> VehicleState {
        let b = self.x_base[step];
        VehicleState::new(v[b + IX], v[b + IY], v[b + IV], v[b + IPHI])
    }

    pub fn control(&self, v: &[f64], step: usize) -> ControlInput {
        let b = self.u_base[step];
        ControlInput::new(v[b], v[b + 1])
    }

    pub fn block(&self, v: &[f64], m: usize, step: usize) -> DualBlock {
        let b = self.blk_base[(step - 1) * self.num_obstacles() + m];
        let nm = self.obstacles[m].num_halfspaces();
        let lambda = v[b..b + nm].to_vec();
        let mu = [v[b + nm], v[b + nm + 1], v[b + nm + 2], v[b + nm + 3]];
        let state = self.state(v, step);
        let d = if self.config.mode.has_slack() {
            v[b + nm + 4]
        } else {
            -certificate_value(&self.footprint, &state, &self.obstacles[m], &lambda, &mu)
        };
        DualBlock { lambda, mu, d }
    }

    /// Indices of the slack distances, empty without them.
    pub fn slack_indices(&self) -> Vec<usize> {
        self.linear.iter().map(|(i, _)| *i).collect()
    }

    pub fn has_terminal_equality(&self) -> bool {
        self.row_term.is_some()
    }

    fn jacobian_visit(&self, v: &[f64], emit: &mut dyn FnMut(usize, usize, f64)) {
        let (dt, l) = (self.dt, self.limits.wheelbase);
        for j in 0..NX {
            emit(j, j, 1.0);
        }
        for step in 0..self.steps {
            let r = self.row_dyn + NX * step;
            let (xa, ua, xb) = (self.x_base[step], self.u_base[step], self.x_base[step + 1]);
            let (vel, phi, delta) = (v[xa + IV], v[xa + IPHI], v[ua]);
            let (s, c) = phi.sin_cos();
            let t = delta.tan();
            let sec2 = 1.0 + t * t;
            emit(r, xa + IX, -1.0);
            emit(r, xa + IV, -dt * c);
            emit(r, xa + IPHI, dt * vel * s);
            emit(r, xb + IX, 1.0);
            emit(r + 1, xa + IY, -1.0);
            emit(r + 1, xa + IV, -dt * s);
            emit(r + 1, xa + IPHI, -dt * vel * c);
            emit(r + 1, xb + IY, 1.0);
            emit(r + IV, xa + IV, -1.0);
            emit(r + IV, ua + 1, -dt);
            emit(r + IV, xb + IV, 1.0);
            emit(r + IPHI, xa + IPHI, -1.0);
            emit(r + IPHI, xa + IV, -dt * t / l);
            emit(r + IPHI, ua, -dt * vel * sec2 / l);
            emit(r + IPHI, xb + IPHI, 1.0);
        }
        for step in 1..self.steps {
            let r = self.row_rate + step - 1;
            emit(r, self.u_base[step], 1.0);
            emit(r, self.u_base[step - 1], -1.0);
        }
        let m_obs = self.num_obstacles();
        for step in 1..=self.steps {
            let xb = self.x_base[step];
            let (px, py, phi) = (v[xb + IX], v[xb + IY], v[xb + IPHI]);
            let (s, c) = phi.sin_cos();
            for (m, o) in self.obstacles.iter().enumerate() {
                let blk = (step - 1) * m_obs + m;
                let r = self.row_col + 4 * blk;
                let b = self.blk_base[blk];
                let nm = o.num_halfspaces();
                let lam = &v[b..b + nm];
                let w = o.a_transpose_times(lam);
                // scalar certificate
                emit(r, xb + IX, w[0]);
                emit(r, xb + IY, w[1]);
                for i in 0..nm {
                    let a = o.normals[i];
                    emit(r, b + i, a[0] * px + a[1] * py - o.offsets[i]);
                }
                for j in 0..4 {
                    emit(r, b + nm + j, -self.footprint.body_offsets[j]);
                }
                if self.config.mode.has_slack() {
                    emit(r, b + nm + 4, 1.0);
                }
                // balance
                emit(r + 1, xb + IPHI, -s * w[0] + c * w[1]);
                for i in 0..nm {
                    let a = o.normals[i];
                    emit(r + 1, b + i, c * a[0] + s * a[1]);
                }
                for j in 0..4 {
                    emit(r + 1, b + nm + j, self.footprint.body_normals[j][0]);
                }
                emit(r + 2, xb + IPHI, -c * w[0] - s * w[1]);
                for i in 0..nm {
                    let a = o.normals[i];
                    emit(r + 2, b + i, -s * a[0] + c * a[1]);
                }
                for j in 0..4 {
                    emit(r + 2, b + nm + j, self.footprint.body_normals[j][1]);
                }
                // squared norm
                for i in 0..nm {
                    let a = o.normals[i];
                    emit(r + 3, b + i, 2.0 * (a[0] * w[0] + a[1] * w[1]));
                }
            }
        }
        if let Some(rt) = self.row_term {
            for j in 0..NX {
                emit(rt + j, self.x_base[self.steps] + j, 1.0);
            }
        }
    }

    fn hessian_visit(&self, v: &[f64], sigma: f64, y: &[f64], emit: &mut dyn FnMut(usize, usize, f64)) {
        for t in self.quad_terms() {
            emit(t.a, t.a, 2.0 * sigma * t.w);
            if let Some(b) = t.b {
                emit(b, b, 2.0 * sigma * t.w);
                emit(t.a, b, -2.0 * sigma * t.w);
            }
        }
        let (dt, l) = (self.dt, self.limits.wheelbase);
        for step in 0..self.steps {
            let r = self.row_dyn + NX * step;
            let (xa, ua) = (self.x_base[step], self.u_base[step]);
            let (vel, phi, delta) = (v[xa + IV], v[xa + IPHI], v[ua]);
            let (s, c) = phi.sin_cos();
            let t = delta.tan();
            let sec2 = 1.0 + t * t;
            let (y0, y1, y2) = (y[r + IX], y[r + IY], y[r + IPHI]);
            emit(xa + IV, xa + IPHI, y0 * dt * s - y1 * dt * c);
            emit(xa + IPHI, xa + IPHI, y0 * dt * vel * c + y1 * dt * vel * s);
            emit(xa + IV, ua, -y2 * dt * sec2 / l);
            emit(ua, ua, -y2 * dt * vel * 2.0 * sec2 * t / l);
        }
        let m_obs = self.num_obstacles();
        for step in 1..=self.steps {
            let xb = self.x_base[step];
            let phi = v[xb + IPHI];
            let (s, c) = phi.sin_cos();
            for (m, o) in self.obstacles.iter().enumerate() {
                let blk = (step - 1) * m_obs + m;
                let r = self.row_col + 4 * blk;
                let b = self.blk_base[blk];
                let nm = o.num_halfspaces();
                let w = o.a_transpose_times(&v[b..b + nm]);
                let (ys, y0, y1, yn) = (y[r], y[r + 1], y[r + 2], y[r + 3]);
                for i in 0..nm {
                    let a = o.normals[i];
                    emit(xb + IX, b + i, ys * a[0]);
                    emit(xb + IY, b + i, ys * a[1]);
                    emit(
                        xb + IPHI,
                        b + i,
                        y0 * (-s * a[0] + c * a[1]) + y1 * (-c * a[0] - s * a[1]),
                    );
                }
                emit(
                    xb + IPHI,
                    xb + IPHI,
                    y0 * (-c * w[0] - s * w[1]) + y1 * (s * w[0] - c * w[1]),
                );
                for i in 0..nm {
                    for j in i..nm {
                        let (ai, aj) = (o.normals[i], o.normals[j]);
                        emit(b + i, b + j, yn * 2.0 * (ai[0] * aj[0] + ai[1] * aj[1]));
                    }
                }
            }
        }
    }

    /// Elimination order following the stage structure: each stage's dual
    /// blocks and their rows come before the stage's state.
    fn stage_order(&self) -> Vec<usize> {
        let n = self.n;
        let m_obs = self.num_obstacles();
        let mut order = Vec::with_capacity(n + self.rows);
        order.extend(self.x_base[0]..self.x_base[0] + NX);
        order.extend((0..NX).map(|j| n + j));
        for step in 1..=self.steps {
            let ub = self.u_base[step - 1];
            order.extend(ub..ub + NU);
            if step >= 2 {
                order.push(n + self.row_rate + step - 2);
            }
            for (m, o) in self.obstacles.iter().enumerate() {
                let blk = (step - 1) * m_obs + m;
                let b = self.blk_base[blk];
                let len = o.num_halfspaces() + 4 + usize::from(self.config.mode.has_slack());
                order.extend(b..b + len);
                let r = self.row_col + 4 * blk;
                order.extend((r..r + 4).map(|r| n + r));
            }
            let xb = self.x_base[step];
            order.extend(xb..xb + NX);
            let r = self.row_dyn + NX * (step - 1);
            order.extend((r..r + NX).map(|r| n + r));
        }
        if let Some(rt) = self.row_term {
            order.extend((rt..rt + NX).map(|r| n + r));
        }
        order
    }
}

impl NlpProblem for MpcNlp {
    fn num_vars(&self) -> usize {
        self.n
    }

    fn num_rows(&self) -> usize {
        self.rows
    }

    fn var_bounds(&self) -> (&[f64], &[f64]) {
        (&self.xl, &self.xu)
    }

    fn row_bounds(&self) -> (&[f64], &[f64]) {
        (&self.cl, &self.cu)
    }

    fn objective(&self, v: &[f64]) -> f64 {
        let mut f = 0.0;
        for t in self.quad_terms() {
            let e = v[t.a] - t.b.map_or(0.0, |b| v[b]) - t.c;
            f += t.w * e * e;
        }
        f + self.linear.iter().map(|(i, w)| w * v[*i]).sum::<f64>()
    }

    fn gradient(&self, v: &[f64], g: &mut [f64]) {
        g.iter_mut().for_each(|x| *x = 0.0);
        for t in self.quad_terms() {
            let e = 2.0 * t.w * (v[t.a] - t.b.map_or(0.0, |b| v[b]) - t.c);
            g[t.a] += e;
            if let Some(b) = t.b {
                g[b] -= e;
            }
        }
        for (i, w) in &self.linear {
            g[*i] += w;
        }
    }

    fn constraints(&self, v: &[f64], out: &mut [f64]) {
        out[..NX].copy_from_slice(&v[self.x_base[0]..self.x_base[0] + NX]);
        for step in 0..self.steps {
            let r = self.row_dyn + NX * step;
            let x = self.state(v, step);
            let next = step_dynamics(&x, &self.control(v, step), self.dt, self.limits.wheelbase);
            let xb = self.x_base[step + 1];
            let pred = state_array(&next);
            for j in 0..NX {
                out[r + j] = v[xb + j] - pred[j];
            }
        }
        for step in 1..self.steps {
            out[self.row_rate + step - 1] = v[self.u_base[step]] - v[self.u_base[step - 1]];
        }
        let m_obs = self.num_obstacles();
        for step in 1..=self.steps {
            let state = self.state(v, step);
            for (m, o) in self.obstacles.iter().enumerate() {
                let blk = (step - 1) * m_obs + m;
                let r = self.row_col + 4 * blk;
                let b = self.blk_base[blk];
                let nm = o.num_halfspaces();
                let (lam, mu) = (&v[b..b + nm], &v[b + nm..b + nm + 4]);
                let mut cert = certificate_value(&self.footprint, &state, o, lam, mu);
                if self.config.mode.has_slack() {
                    cert += v[b + nm + 4];
                }
                out[r] = cert;
                let bal = crate::geometry::certificate_balance(&self.footprint, &state, o, lam, mu);
                out[r + 1] = bal[0];
                out[r + 2] = bal[1];
                out[r + 3] = o.a_transpose_times(lam).norm_squared();
            }
        }
        if let Some(rt) = self.row_term {
            let xb = self.x_base[self.steps];
            out[rt..rt + NX].copy_from_slice(&v[xb..xb + NX]);
        }
    }

    fn jacobian_pattern(&self) -> &[(usize, usize)] {
        &self.jac_pat
    }

    fn jacobian_values(&self, v: &[f64], out: &mut [f64]) {
        let mut i = 0;
        self.jacobian_visit(v, &mut |_, _, val| {
            out[i] = val;
            i += 1;
        });
    }

    fn hessian_pattern(&self) -> &[(usize, usize)] {
        &self.hess_pat
    }

    fn hessian_values(&self, v: &[f64], sigma: f64, y: &[f64], out: &mut [f64]) {
        let mut i = 0;
        self.hessian_visit(v, sigma, y, &mut |_, _, val| {
            out[i] = val;
            i += 1;
        });
    }

    fn elimination_order(&self) -> Vec<usize> {
        self.stage_order()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcReport {
    pub status: SolveStatus,
    pub iterations: usize,
    pub kkt_residuals: KktResiduals,
    /// Seconds.
    pub wall_time: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcSolution {
    pub dt: f64,
    pub states: Vec<VehicleState>,
    pub controls: Vec<ControlInput>,
    pub duals: DualWarmStart,
    pub report: MpcReport,
    pub mode: Mode,
    pub x_f: VehicleState,
    pub config: MpcConfig,
    pub reference: ControlReference,
}

impl MpcSolution {
    pub fn is_optimal(&self) -> bool {
        self.report.status == SolveStatus::Optimal
    }

    /// Slack distances in block order, empty in the base problem.
    pub fn slack_distances(&self) -> Vec<f64> {
        if self.mode.has_slack() {
            self.duals.blocks.iter().map(|b| b.d).collect()
        } else {
            Vec::new()
        }
    }
}

/// Distance the initial duals keep from their bounds; matches the IPM's
/// bound push so the pushed start still satisfies the dual equalities.
const DUAL_MARGIN: f64 = 1e-4;

pub fn solve_mpc(nlp: &MpcNlp) -> MpcSolution {
    let settings = IpmSettings {
        tol: nlp.config.kkt_tol,
        max_iter: nlp.config.max_iter,
        mu_init: 1e-2,
        bound_push: DUAL_MARGIN,
    };
    let start = Instant::now();
    let res = ipm::solve(nlp, &nlp.initial, &settings);
    let wall_time = start.elapsed().as_secs_f64();
    solution_from(nlp, &res.x, MpcReport {
        status: res.status,
        iterations: res.iterations,
        kkt_residuals: res.residuals,
        wall_time,
        objective: res.objective,
    })
}

fn solution_from(nlp: &MpcNlp, v: &[f64], report: MpcReport) -> MpcSolution {
    let k = nlp.steps;
    let m_obs = nlp.num_obstacles();
    let blocks = (1..=k)
        .flat_map(|step| (0..m_obs).map(move |m| (m, step)))
        .map(|(m, step)| nlp.block(v, m, step))
        .collect();
    MpcSolution {
        dt: nlp.dt,
        states: (0..=k).map(|s| nlp.state(v, s)).collect(),
        controls: (0..k).map(|s| nlp.control(v, s)).collect(),
        duals: DualWarmStart {
            num_obstacles: m_obs,
            steps: k,
            blocks,
            fallback_blocks: 0,
            reports: Vec::new(),
        },
        report,
        mode: nlp.config.mode,
        x_f: nlp.x_f,
        config: nlp.config.clone(),
        reference: nlp.reference.clone(),
    }
}

/// Findings of an independent check of a solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    /// `(k, residual)` for transitions `x(k) -> x(k+1)` above tolerance.
    pub dynamics_violations: Vec<(usize, f64)>,
    pub max_dynamics_residual: f64,
    pub limit_violations: Vec<LimitViolation>,
    /// `(m, k, distance)` where the body touches or overlaps an obstacle.
    pub collisions: Vec<(usize, usize, f64)>,
    /// `(m, k, -d, distance)` where the certificate exceeds the distance.
    pub certificate_violations: Vec<(usize, usize, f64, f64)>,
    /// Smallest body-obstacle distance; `None` without obstacles.
    pub min_distance: Option<f64>,
    pub cost: Option<f64>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.dynamics_violations.is_empty()
            && self.limit_violations.is_empty()
            && self.collisions.is_empty()
            && self.certificate_violations.is_empty()
    }
}

/// Tolerance on the dynamics residuals and the box limits.
pub const DYNAMICS_TOL: f64 = 1e-6;
pub const CERTIFICATE_TOL: f64 = 1e-4;

pub fn verify_solution(
    sol: &MpcSolution,
    obstacles: &[ConvexObstacle],
    footprint: &VehicleFootprint,
    limits: &VehicleLimits,
    dt: f64,
) -> AuditReport {
    let mut dynamics_violations = Vec::new();
    let mut max_dyn: f64 = 0.0;
    for (k, u) in sol.controls.iter().enumerate() {
        let pred = step_dynamics(&sol.states[k], u, dt, limits.wheelbase);
        let next = sol.states[k + 1];
        let res = (pred.x - next.x)
            .abs()
            .max((pred.y - next.y).abs())
            .max((pred.v - next.v).abs())
            .max((pred.phi - next.phi).abs());
        max_dyn = max_dyn.max(res);
        if res > DYNAMICS_TOL {
            dynamics_violations.push((k, res));
        }
    }
    let limit_violations = check_limits_with_tolerance(&sol.states, &sol.controls, limits, dt, DYNAMICS_TOL);
    let mut collisions = Vec::new();
    let mut certificate_violations = Vec::new();
    let mut min_distance: Option<f64> = None;
    let m_obs = obstacles.len();
    for (k, s) in sol.states.iter().enumerate() {
        let body = footprint.at(s);
        for (m, o) in obstacles.iter().enumerate() {
            let dist = polygon_distance(&body, o);
            min_distance = Some(min_distance.map_or(dist, |d| d.min(dist)));
            if dist <= 0.0 {
                collisions.push((m, k, dist));
            }
            if k >= 1 && sol.duals.num_obstacles == m_obs && k <= sol.duals.steps {
                let d = sol.duals.block(m, k).d;
                if -d > dist + CERTIFICATE_TOL {
                    certificate_violations.push((m, k, -d, dist));
                }
            }
        }
    }
    let cost = evaluate_cost(
        &sol.states,
        &sol.controls,
        &sol.slack_distances(),
        &sol.config,
        &sol.x_f,
        &sol.reference,
    )
    .ok();
    AuditReport {
        dynamics_violations,
        max_dynamics_residual: max_dyn,
        limit_violations,
        collisions,
        certificate_violations,
        min_distance,
        cost,
    }
}
