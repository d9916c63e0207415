//! Kinematic bicycle model on the rear axle, with box limits.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// `[x, y, v, phi]`. Heading is never wrapped.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub phi: f64,
}

impl VehicleState {
    pub const fn new(x: f64, y: f64, v: f64, phi: f64) -> Self {
        Self { x, y, v, phi }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.v, self.phi]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    /// Front-wheel steering angle (rad).
    pub steering: f64,
    /// Longitudinal acceleration (m/s^2).
    pub acceleration: f64,
}

impl ControlInput {
    pub const fn new(steering: f64, acceleration: f64) -> Self {
        Self {
            steering,
            acceleration,
        }
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.steering, self.acceleration]
    }
}

/// Closed interval `[lo, hi]`, serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, value: f64, tol: f64) -> bool {
        value >= self.lo - tol && value <= self.hi + tol
    }

    pub fn is_valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi
    }
}

impl From<[f64; 2]> for Interval {
    fn from(a: [f64; 2]) -> Self {
        Self::new(a[0], a[1])
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleLimits {
    pub steering: Interval,
    pub steering_rate: Interval,
    pub acceleration: Interval,
    pub speed: Interval,
    pub wheelbase: f64,
}

impl Default for VehicleLimits {
    fn default() -> Self {
        Self {
            steering: Interval::new(-0.5, 0.5),
            steering_rate: Interval::new(-0.5, 0.5),
            acceleration: Interval::new(-1.0, 1.0),
            speed: Interval::new(-1.0, 2.0),
            wheelbase: 2.8,
        }
    }
}

impl VehicleLimits {
    pub fn is_valid(&self) -> bool {
        self.steering.is_valid()
            && self.steering_rate.is_valid()
            && self.acceleration.is_valid()
            && self.speed.is_valid()
            && self.wheelbase > 0.0
    }

    /// Largest steering magnitude usable in both directions.
    pub fn max_steering(&self) -> f64 {
        self.steering.hi.min(-self.steering.lo)
    }

    pub fn max_curvature(&self) -> f64 {
        self.max_steering().tan() / self.wheelbase
    }

    pub fn min_turning_radius(&self) -> f64 {
        1.0 / self.max_curvature()
    }

    /// Symmetric acceleration magnitude available for speeding up and braking.
    pub fn max_acceleration(&self) -> f64 {
        self.acceleration.hi.min(-self.acceleration.lo)
    }

    pub fn max_forward_speed(&self) -> f64 {
        self.speed.hi
    }

    pub fn max_reverse_speed(&self) -> f64 {
        -self.speed.lo
    }
}

/// One explicit Euler step of the bicycle model; every right-hand side uses
/// the pre-step state.
pub fn step_dynamics(
    state: &VehicleState,
    control: &ControlInput,
    dt: f64,
    wheelbase: f64,
) -> VehicleState {
    let (s, c) = state.phi.sin_cos();
    VehicleState {
        x: state.x + state.v * c * dt,
        y: state.y + state.v * s * dt,
        v: state.v + control.acceleration * dt,
        phi: state.phi + state.v * control.steering.tan() / wheelbase * dt,
    }
}

/// States visited by applying `controls` from `x0`; `controls.len() + 1` entries.
pub fn rollout(
    x0: &VehicleState,
    controls: &[ControlInput],
    dt: f64,
    wheelbase: f64,
) -> Vec<VehicleState> {
    assert!(!controls.is_empty(), "rollout needs at least one control");
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(*x0);
    for u in controls {
        let next = step_dynamics(states.last().unwrap(), u, dt, wheelbase);
        states.push(next);
    }
    states
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitKind {
    Steering,
    SteeringRate,
    Acceleration,
    Speed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitViolation {
    pub index: usize,
    pub kind: LimitKind,
    pub value: f64,
}

/// Every index at which a control, a state speed or a steering rate leaves
/// its range by more than `tol`.
pub fn check_limits_with_tolerance(
    states: &[VehicleState],
    controls: &[ControlInput],
    limits: &VehicleLimits,
    dt: f64,
    tol: f64,
) -> Vec<LimitViolation> {
    assert_eq!(states.len(), controls.len() + 1, "need one more state than controls");
    let mut out = Vec::new();
    for (k, u) in controls.iter().enumerate() {
        if !limits.steering.contains(u.steering, tol) {
            out.push(LimitViolation { index: k, kind: LimitKind::Steering, value: u.steering });
        }
        if !limits.acceleration.contains(u.acceleration, tol) {
            out.push(LimitViolation {
                index: k,
                kind: LimitKind::Acceleration,
                value: u.acceleration,
            });
        }
        if k > 0 {
            let rate = (u.steering - controls[k - 1].steering) / dt;
            if !limits.steering_rate.contains(rate, tol) {
                out.push(LimitViolation { index: k, kind: LimitKind::SteeringRate, value: rate });
            }
        }
    }
    for (k, x) in states.iter().enumerate() {
        if !limits.speed.contains(x.v, tol) {
            out.push(LimitViolation { index: k, kind: LimitKind::Speed, value: x.v });
        }
    }
    out
}

pub fn check_limits(
    states: &[VehicleState],
    controls: &[ControlInput],
    limits: &VehicleLimits,
    dt: f64,
) -> Vec<LimitViolation> {
    check_limits_with_tolerance(states, controls, limits, dt, 0.0)
}

/// Signed difference `a - b` folded into `(-pi, pi]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let mut d = (a - b) % (2.0 * PI);
    if d <= -PI {
        d += 2.0 * PI;
    } else if d > PI {
        d -= 2.0 * PI;
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn straight_coast() {
        let x = step_dynamics(&VehicleState::new(0.0, 0.0, 1.0, 0.0), &ControlInput::default(), 0.1, 2.8);
        assert_eq!(x, VehicleState::new(0.1, 0.0, 1.0, 0.0));
    }

    #[test]
    fn axis_aligned_accelerating() {
        let x = step_dynamics(
            &VehicleState::new(0.0, 0.0, 1.0, FRAC_PI_2),
            &ControlInput::new(0.0, 1.0),
            0.1,
            2.8,
        );
        assert_abs_diff_eq!(x.x, 0.0, epsilon = 1e-16);
        assert_abs_diff_eq!(x.y, 0.1, epsilon = 1e-16);
        assert_abs_diff_eq!(x.v, 1.1, epsilon = 1e-15);
        assert_eq!(x.phi, FRAC_PI_2);
    }

    #[test]
    fn steering_turns_heading() {
        let x = step_dynamics(
            &VehicleState::new(0.0, 0.0, 1.0, 0.0),
            &ControlInput::new(0.5, 0.0),
            0.1,
            2.8,
        );
        // 0.1 * tan(0.5) / 2.8, tan(0.5) = 0.54630248984379051
        assert_abs_diff_eq!(x.phi, 0.019_510_803_208_706_8, epsilon = 1e-15);
    }

    #[test]
    fn standing_still_keeps_pose() {
        let x0 = VehicleState::new(1.0, -2.0, 0.0, 0.4);
        let x = step_dynamics(&x0, &ControlInput::new(0.3, 0.0), 0.2, 2.8);
        assert_eq!(x, x0);
    }

    #[test]
    fn rollout_composition() {
        let x0 = VehicleState::new(0.0, 0.0, 0.0, 0.0);
        let states = rollout(&x0, &[ControlInput::new(0.0, 1.0); 10], 0.1, 2.8);
        assert_eq!(states.len(), 11);
        assert_eq!(states[0], x0);
        assert_abs_diff_eq!(states[10].v, 1.0, epsilon = 1e-12);

        let single = rollout(&x0, &[ControlInput::default()], 0.1, 2.8);
        assert_eq!(single, vec![x0, x0]);

        let controls: Vec<_> = (0..7)
            .map(|k| ControlInput::new(0.1 * (k as f64).sin(), 0.3 * (k as f64).cos()))
            .collect();
        let states = rollout(&VehicleState::new(1.0, 2.0, 0.5, 0.2), &controls, 0.15, 2.8);
        let mut x = states[0];
        for (k, u) in controls.iter().enumerate() {
            x = step_dynamics(&x, u, 0.15, 2.8);
            assert_eq!(x, states[k + 1]);
        }
    }

    #[test]
    fn limit_checks() {
        let limits = VehicleLimits::default();
        let zeros = vec![VehicleState::default(); 3];
        assert!(check_limits(&zeros, &[ControlInput::default(); 2], &limits, 0.1).is_empty());

        let v = check_limits(
            &zeros,
            &[ControlInput::default(), ControlInput::new(0.6, 0.0)],
            &limits,
            10.0,
        );
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].index, v[0].kind), (1, LimitKind::Steering));

        let v = check_limits(
            &zeros,
            &[ControlInput::new(0.0, 0.0), ControlInput::new(0.5, 0.0)],
            &limits,
            0.5,
        );
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, LimitKind::SteeringRate);
        assert_abs_diff_eq!(v[0].value, 1.0);
    }

    #[test]
    fn angle_differences() {
        assert_abs_diff_eq!(angle_diff(0.1, 2.0 * PI - 0.1), 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(angle_diff(3.0 * PI, 0.0), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(angle_diff(-0.5, 0.5), -1.0, epsilon = 1e-12);
    }
}
