//! Temporal warm start: horizon length, per-gear-segment speed profiles and
//! resampling of the coarse path onto the uniform MPC time grid.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid_search::{segment_polylines, CoarsePathPoint, Gear, GearSegment};
use crate::qp_solver::{solve_qp, QpError, QpStatus, QuadraticProgram};
use crate::vehicle::{ControlInput, VehicleLimits, VehicleState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpeedProfileError {
    #[error("horizon parameters must be positive")]
    NonPositiveInput,
    #[error("horizon {horizon} s is shorter than the minimum traverse time {minimum} s")]
    InfeasibleProfile { horizon: f64, minimum: f64 },
    #[error("speed profile QP failed: {0}")]
    SolverFailure(String),
    #[error("expected one profile per segment and enough steps")]
    MismatchedSegments,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonParams {
    pub r: f64,
    pub v_max: f64,
    pub a_max: f64,
    pub s_total: f64,
}

/// `T = r (v_max^2 + s a_max) / (a_max v_max)`. The usual range for `r` is
/// `[1.2, 1.5]`; `r = 1` gives the rest-to-rest minimum time.
pub fn compute_horizon(p: &HorizonParams) -> Result<f64, SpeedProfileError> {
    let vals = [p.r, p.v_max, p.a_max, p.s_total];
    if vals.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(SpeedProfileError::NonPositiveInput);
    }
    Ok(horizon_unchecked(p.r, p.v_max, p.a_max, p.s_total))
}

fn horizon_unchecked(r: f64, v_max: f64, a_max: f64, s: f64) -> f64 {
    r * (v_max * v_max + s * a_max) / (a_max * v_max)
}

/// Rest-to-rest minimum time under `|a| <= a_max`, `0 <= v <= v_max`.
pub fn minimum_traverse_time(length: f64, v_max: f64, a_max: f64) -> f64 {
    if length >= v_max * v_max / a_max {
        v_max / a_max + length / v_max
    } else {
        2.0 * (length / a_max).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileLimits {
    pub v_max: f64,
    pub a_max: f64,
}

impl ProfileLimits {
    pub fn for_gear(limits: &VehicleLimits, gear: Gear) -> Self {
        let v_max = match gear {
            Gear::Forward => limits.max_forward_speed(),
            Gear::Reverse => limits.max_reverse_speed(),
        };
        Self {
            v_max,
            a_max: limits.max_acceleration(),
        }
    }
}

/// Rest-to-rest longitudinal profile; `s` and `v` have `K + 1` entries and
/// `a` has `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedProfile {
    pub dt: f64,
    pub s: Vec<f64>,
    pub v: Vec<f64>,
    pub a: Vec<f64>,
}

impl SpeedProfile {
    pub fn steps(&self) -> usize {
        self.a.len()
    }
}

/// `sum a_i^2 + w_j sum ((a_{i+1} - a_i) / dt)^2`.
pub fn profile_objective(profile: &SpeedProfile, jerk_weight: f64) -> f64 {
    let acc: f64 = profile.a.iter().map(|a| a * a).sum();
    let jerk: f64 = profile
        .a
        .windows(2)
        .map(|w| ((w[1] - w[0]) / profile.dt).powi(2))
        .sum();
    acc + jerk_weight * jerk
}

pub fn optimize_speed_profile(
    segment_length: f64,
    limits: &ProfileLimits,
    k_seg: usize,
    t_seg: f64,
    jerk_weight: f64,
) -> Result<SpeedProfile, SpeedProfileError> {
    if !(segment_length > 0.0 && t_seg > 0.0 && limits.v_max > 0.0 && limits.a_max > 0.0) || k_seg < 2 {
        return Err(SpeedProfileError::NonPositiveInput);
    }
    let minimum = minimum_traverse_time(segment_length, limits.v_max, limits.a_max);
    if t_seg < minimum {
        return Err(SpeedProfileError::InfeasibleProfile {
            horizon: t_seg,
            minimum,
        });
    }
    let k = k_seg;
    let dt = t_seg / k as f64;
    let si = |i: usize| i;
    let vi = |i: usize| k + 1 + i;
    let ai = |i: usize| 2 * (k + 1) + i;
    let mut qp = QuadraticProgram::new(3 * k + 2);
    let wj = 2.0 * jerk_weight / (dt * dt);
    for i in 0..k {
        let mut diag = 2.0;
        if i > 0 {
            diag += wj;
        }
        if i + 1 < k {
            diag += wj;
            qp.add_hessian(ai(i), ai(i + 1), -wj);
        }
        qp.add_hessian(ai(i), ai(i), diag);
    }
    qp.add_equality(&[(si(0), 1.0)], 0.0);
    qp.add_equality(&[(vi(0), 1.0)], 0.0);
    qp.add_equality(&[(si(k), 1.0)], segment_length);
    qp.add_equality(&[(vi(k), 1.0)], 0.0);
    for i in 0..k {
        qp.add_equality(
            &[(si(i + 1), 1.0), (si(i), -1.0), (vi(i), -dt), (ai(i), -0.5 * dt * dt)],
            0.0,
        );
        qp.add_equality(&[(vi(i + 1), 1.0), (vi(i), -1.0), (ai(i), -dt)], 0.0);
    }
    for i in 1..k {
        qp.add_bound(vi(i), 0.0, limits.v_max);
    }
    for i in 0..k {
        qp.add_bound(ai(i), -limits.a_max, limits.a_max);
    }
    let sol = solve_qp(&qp, 1e-8, 20_000).map_err(|e: QpError| SpeedProfileError::SolverFailure(e.to_string()))?;
    match sol.report.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => {
            return Err(SpeedProfileError::InfeasibleProfile {
                horizon: t_seg,
                minimum,
            })
        }
        QpStatus::MaxIterations => {
            return Err(SpeedProfileError::SolverFailure("iteration limit".into()));
        }
    }
    let x = sol.x;
    Ok(SpeedProfile {
        dt,
        s: x[..=k].to_vec(),
        v: x[k + 1..2 * k + 2].iter().map(|v| v.max(0.0)).collect(),
        a: x[2 * k + 2..].to_vec(),
    })
}

/// Constant-rate traversal differentiated numerically: `s` uniform in time,
/// `v` by central differences with zero endpoints, `a` by forward
/// differences, both clipped to the limits.
pub fn naive_profile(segment_length: f64, limits: &ProfileLimits, k_seg: usize, t_seg: f64) -> SpeedProfile {
    let k = k_seg.max(1);
    let dt = t_seg / k as f64;
    let s: Vec<f64> = (0..=k).map(|i| segment_length * i as f64 / k as f64).collect();
    let mut v = vec![0.0; k + 1];
    for i in 1..k {
        v[i] = ((s[i + 1] - s[i - 1]) / (2.0 * dt)).clamp(0.0, limits.v_max);
    }
    let a = (0..k)
        .map(|i| ((v[i + 1] - v[i]) / dt).clamp(-limits.a_max, limits.a_max))
        .collect();
    SpeedProfile { dt, s, v, a }
}

/// Warm start on the uniform grid `dt = T / K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmStartTrajectory {
    pub dt: f64,
    pub states: Vec<VehicleState>,
    pub controls: Vec<ControlInput>,
    /// Steps assigned to each gear segment.
    pub segment_steps: Vec<usize>,
}

impl WarmStartTrajectory {
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }
}

/// Splits `k` steps proportionally to `weights` by largest remainder.
pub fn allocate_steps(weights: &[f64], k: usize) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    if weights.is_empty() || total <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| w / total * k as f64).collect();
    let mut steps: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = steps.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        (exact[b] - exact[b].floor())
            .total_cmp(&(exact[a] - exact[a].floor()))
            .then(a.cmp(&b))
    });
    for &j in order.iter().take(k - assigned) {
        steps[j] += 1;
    }
    steps
}

fn polyline_length(points: &[CoarsePathPoint]) -> Vec<f64> {
    let mut cum = vec![0.0];
    for w in points.windows(2) {
        let d = (w[1].x - w[0].x).hypot(w[1].y - w[0].y);
        cum.push(cum.last().unwrap() + d);
    }
    cum
}

fn interpolate(points: &[CoarsePathPoint], cum: &[f64], s: f64) -> (f64, f64, f64) {
    let last = points.len() - 1;
    if s <= 0.0 || last == 0 {
        return (points[0].x, points[0].y, points[0].phi);
    }
    if s >= cum[last] {
        return (points[last].x, points[last].y, points[last].phi);
    }
    let p = cum.partition_point(|&c| c <= s).saturating_sub(1).min(last - 1);
    let len = cum[p + 1] - cum[p];
    let t = if len > 0.0 { (s - cum[p]) / len } else { 0.0 };
    let (a, b) = (points[p], points[p + 1]);
    (a.x + t * (b.x - a.x), a.y + t * (b.y - a.y), a.phi + t * (b.phi - a.phi))
}

fn curvature_at(points: &[CoarsePathPoint], cum: &[f64], s: f64) -> f64 {
    let last = points.len() - 1;
    if last == 0 {
        return 0.0;
    }
    let mut p = cum.partition_point(|&c| c <= s).saturating_sub(1).min(last - 1);
    while p < last - 1 && cum[p + 1] - cum[p] <= 1e-9 {
        p += 1;
    }
    let len = cum[p + 1] - cum[p];
    if len <= 1e-9 {
        0.0
    } else {
        (points[p + 1].phi - points[p].phi) / len
    }
}

/// Places each segment's profile on its polyline and concatenates them;
/// the trajectory is padded at rest up to `k` steps.
pub fn resample_warm_start(
    segments: &[GearSegment],
    profiles: &[SpeedProfile],
    k: usize,
    limits: &VehicleLimits,
) -> Result<WarmStartTrajectory, SpeedProfileError> {
    let total: usize = profiles.iter().map(|p| p.steps()).sum();
    if segments.is_empty() || segments.len() != profiles.len() || total > k || total == 0 {
        return Err(SpeedProfileError::MismatchedSegments);
    }
    let dt = profiles[0].dt;
    let polylines = segment_polylines(segments);
    let mut states = Vec::with_capacity(k + 1);
    let mut controls = Vec::with_capacity(k);
    for (j, (poly, prof)) in polylines.iter().zip(profiles).enumerate() {
        let sign = segments[j].gear.sign();
        let cum = polyline_length(poly);
        let n = prof.steps();
        let last_segment = j + 1 == profiles.len();
        for i in 0..n + usize::from(last_segment) {
            let (x, y, phi) = interpolate(poly, &cum, prof.s[i]);
            states.push(VehicleState::new(x, y, sign * prof.v[i], phi));
            if i < n {
                let ds = prof.s[i + 1] - prof.s[i];
                let kappa = if ds > 1e-6 {
                    let (_, _, phi1) = interpolate(poly, &cum, prof.s[i + 1]);
                    (phi1 - phi) / ds
                } else {
                    curvature_at(poly, &cum, prof.s[i])
                };
                let delta = (limits.wheelbase * sign * kappa)
                    .atan()
                    .clamp(limits.steering.lo, limits.steering.hi);
                controls.push(ControlInput::new(delta, sign * prof.a[i]));
            }
        }
    }
    while controls.len() < k {
        let last = *states.last().unwrap();
        let steer = controls.last().map_or(0.0, |c| c.steering);
        controls.push(ControlInput::new(steer, 0.0));
        states.push(VehicleState { v: 0.0, ..last });
    }
    if let Some(steer) = rate_limited_steering(&controls, &states, limits, dt) {
        for (c, d) in controls.iter_mut().zip(steer) {
            c.steering = d;
        }
    }
    Ok(WarmStartTrajectory {
        dt,
        states,
        controls,
        segment_steps: profiles.iter().map(|p| p.steps()).collect(),
    })
}

/// Closest steering sequence within the steering and rate limits, weighted
/// by `v^2` so the changes land where the car is slow and the dynamics barely
/// move. `None` if the QP does not solve.
fn rate_limited_steering(
    controls: &[ControlInput],
    states: &[VehicleState],
    limits: &VehicleLimits,
    dt: f64,
) -> Option<Vec<f64>> {
    let k = controls.len();
    let (lo, hi) = (0.999 * limits.steering_rate.lo * dt, 0.999 * limits.steering_rate.hi * dt);
    let within = controls.windows(2).all(|w| {
        let r = w[1].steering - w[0].steering;
        r >= lo && r <= hi
    });
    if within || k < 2 {
        return None;
    }
    let mut qp = QuadraticProgram::new(k);
    for (i, c) in controls.iter().enumerate() {
        let v = 0.5 * (states[i].v + states[i + 1].v);
        let w = 2.0 * (v * v + 1e-3);
        qp.add_hessian(i, i, w);
        qp.q[i] = -w * c.steering;
        qp.add_bound(i, limits.steering.lo, limits.steering.hi);
    }
    for i in 0..k - 1 {
        qp.add_inequality(&[(i + 1, 1.0), (i, -1.0)], lo, hi);
    }
    let sol = solve_qp(&qp, 1e-9, 20_000).ok()?;
    (sol.report.status == QpStatus::Optimal).then(|| {
        sol.x
            .iter()
            .map(|d| d.clamp(limits.steering.lo, limits.steering.hi))
            .collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileConfig {
    /// Horizon ratio `r`.
    pub horizon_ratio: f64,
    pub jerk_weight: f64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            horizon_ratio: 1.5,
            jerk_weight: 1.0,
        }
    }
}

/// Total horizon for a gear-partitioned path: the formula on the whole
/// length, raised to `r` times the summed per-segment minimum times when the
/// path has several rest-to-rest segments.
pub fn path_horizon(
    lengths: &[f64],
    gears: &[Gear],
    limits: &VehicleLimits,
    r: f64,
) -> Result<f64, SpeedProfileError> {
    let s_total: f64 = lengths.iter().sum();
    let formula = compute_horizon(&HorizonParams {
        r,
        v_max: limits.max_forward_speed(),
        a_max: limits.max_acceleration(),
        s_total,
    })?;
    let summed: f64 = lengths
        .iter()
        .zip(gears)
        .map(|(l, g)| {
            let p = ProfileLimits::for_gear(limits, *g);
            minimum_traverse_time(*l, p.v_max, p.a_max)
        })
        .sum();
    Ok(formula.max(r * summed))
}

/// Horizon, step allocation, per-segment profiles and resampling. With
/// `naive` the finite-difference profile replaces the QP.
pub fn temporal_warm_start(
    segments: &[GearSegment],
    limits: &VehicleLimits,
    k: usize,
    config: &ProfileConfig,
    naive: bool,
) -> Result<WarmStartTrajectory, SpeedProfileError> {
    if segments.is_empty() || k < 2 {
        return Err(SpeedProfileError::MismatchedSegments);
    }
    let polylines = segment_polylines(segments);
    let lengths: Vec<f64> = polylines
        .iter()
        .map(|p| *polyline_length(p).last().unwrap())
        .collect();
    let gears: Vec<Gear> = segments.iter().map(|s| s.gear).collect();
    let horizon = path_horizon(&lengths, &gears, limits, config.horizon_ratio)?;
    let dt = horizon / k as f64;
    let min_times: Vec<f64> = lengths
        .iter()
        .zip(&gears)
        .map(|(l, g)| {
            let p = ProfileLimits::for_gear(limits, *g);
            minimum_traverse_time(*l, p.v_max, p.a_max)
        })
        .collect();
    let mut steps = allocate_steps(&min_times, k);
    let required: Vec<usize> = min_times
        .iter()
        .map(|t| ((1.1 * t / dt).ceil() as usize + 2).max(3))
        .collect();
    if required.iter().sum::<usize>() > k {
        return Err(SpeedProfileError::InfeasibleProfile {
            horizon,
            minimum: min_times.iter().sum(),
        });
    }
    // Move steps from the largest surplus to any segment below its minimum.
    while let Some(j) = (0..steps.len()).find(|&j| steps[j] < required[j]) {
        let donor = (0..steps.len())
            .filter(|&i| steps[i] > required[i])
            .max_by_key(|&i| (steps[i] - required[i], usize::MAX - i))
            .expect("total steps cover the requirements");
        steps[donor] -= 1;
        steps[j] += 1;
    }
    let profiles = lengths
        .iter()
        .zip(&gears)
        .zip(&steps)
        .map(|((&len, &gear), &n)| {
            let p = ProfileLimits::for_gear(limits, gear);
            let t = n as f64 * dt;
            if naive {
                Ok(naive_profile(len, &p, n, t))
            } else if len < 1e-9 {
                Ok(naive_profile(0.0, &p, n, t))
            } else {
                optimize_speed_profile(len, &p, n, t, config.jerk_weight)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    resample_warm_start(segments, &profiles, k, limits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn horizon_examples() {
        let h = |r, s| {
            compute_horizon(&HorizonParams {
                r,
                v_max: 2.0,
                a_max: 1.0,
                s_total: s,
            })
        };
        assert_eq!(h(1.2, 10.0).unwrap(), 8.4);
        assert_eq!(h(1.5, 6.0).unwrap(), 7.5);
        assert!((h(1.3, 1e-12).unwrap() - 1.3 * 2.0).abs() < 1e-9);
        assert_eq!(h(0.0, 10.0), Err(SpeedProfileError::NonPositiveInput));
        assert_eq!(h(1.2, 0.0), Err(SpeedProfileError::NonPositiveInput));
    }

    #[test]
    fn unit_ratio_matches_trapezoid() {
        for s in [4.0, 6.5, 10.0, 31.0] {
            assert!((horizon_unchecked(1.0, 2.0, 1.0, s) - minimum_traverse_time(s, 2.0, 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn largest_remainder_allocation() {
        assert_eq!(allocate_steps(&[1.0, 1.0, 1.0], 10), vec![4, 3, 3]);
        assert_eq!(allocate_steps(&[3.0, 1.0], 8), vec![6, 2]);
        assert_eq!(allocate_steps(&[0.2, 0.5, 0.3], 7).iter().sum::<usize>(), 7);
    }
}
