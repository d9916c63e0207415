//! Shortest paths for a car that drives forward and backward with a bounded
//! turning radius, enumerated over the classic word families.

use std::f64::consts::{FRAC_PI_2, PI};

const ZERO: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Steer {
    Left,
    Straight,
    Right,
}

/// One piece of a path; `length` is in meters and negative when reversing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RsSegment {
    pub steer: Steer,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RsPath {
    pub segments: Vec<RsSegment>,
    pub radius: f64,
}

impl RsPath {
    pub fn length(&self) -> f64 {
        self.segments.iter().map(|s| s.length.abs()).sum()
    }

    /// Poses along the path at most `step` apart, each tagged with the sign of
    /// the motion arriving at it. The first pose is the start with the sign of
    /// the first motion.
    pub fn sample(&self, start: (f64, f64, f64), step: f64) -> Vec<(f64, f64, f64, bool)> {
        let mut out = Vec::new();
        let mut pose = start;
        let mut first = true;
        for seg in &self.segments {
            if seg.length.abs() < 1e-9 {
                continue;
            }
            let forward = seg.length > 0.0;
            if first {
                out.push((pose.0, pose.1, pose.2, forward));
                first = false;
            }
            let n = (seg.length.abs() / step).ceil().max(1.0) as usize;
            for i in 1..=n {
                let l = seg.length * i as f64 / n as f64;
                let p = advance(pose, seg.steer, l, self.radius);
                out.push((p.0, p.1, p.2, forward));
            }
            pose = advance(pose, seg.steer, seg.length, self.radius);
        }
        if out.is_empty() {
            out.push((start.0, start.1, start.2, true));
        }
        out
    }

    pub fn end_pose(&self, start: (f64, f64, f64)) -> (f64, f64, f64) {
        self.segments
            .iter()
            .fold(start, |p, s| advance(p, s.steer, s.length, self.radius))
    }
}

/// Pose after driving `length` meters (signed) with the given steer.
pub fn advance(pose: (f64, f64, f64), steer: Steer, length: f64, radius: f64) -> (f64, f64, f64) {
    let (x, y, phi) = pose;
    match steer {
        Steer::Straight => (x + length * phi.cos(), y + length * phi.sin(), phi),
        Steer::Left => {
            let dphi = length / radius;
            (
                x + radius * ((phi + dphi).sin() - phi.sin()),
                y - radius * ((phi + dphi).cos() - phi.cos()),
                phi + dphi,
            )
        }
        Steer::Right => {
            let dphi = -length / radius;
            (
                x - radius * ((phi + dphi).sin() - phi.sin()),
                y + radius * ((phi + dphi).cos() - phi.cos()),
                phi + dphi,
            )
        }
    }
}

fn mod2pi(x: f64) -> f64 {
    let mut v = x % (2.0 * PI);
    if v < -PI {
        v += 2.0 * PI;
    } else if v > PI {
        v -= 2.0 * PI;
    }
    v
}

fn polar(x: f64, y: f64) -> (f64, f64) {
    (x.hypot(y), y.atan2(x))
}

fn tau_omega(u: f64, v: f64, xi: f64, eta: f64, phi: f64) -> (f64, f64) {
    let delta = mod2pi(u - v);
    let a = u.sin() - delta.sin();
    let b = u.cos() - delta.cos() - 1.0;
    let t1 = (eta * a - xi * b).atan2(xi * a + eta * b);
    let t2 = 2.0 * (delta.cos() - v.cos() - u.cos()) + 3.0;
    let tau = if t2 < 0.0 { mod2pi(t1 + PI) } else { mod2pi(t1) };
    (tau, mod2pi(tau - u + v - phi))
}

fn lp_sp_lp(x: f64, y: f64, phi: f64) -> Option<[f64; 3]> {
    let (u, t) = polar(x - phi.sin(), y - 1.0 + phi.cos());
    if t >= -ZERO {
        let v = mod2pi(phi - t);
        if v >= -ZERO {
            return Some([t, u, v]);
        }
    }
    None
}

fn lp_sp_rp(x: f64, y: f64, phi: f64) -> Option<[f64; 3]> {
    let (u1, t1) = polar(x + phi.sin(), y - 1.0 - phi.cos());
    let u1 = u1 * u1;
    if u1 >= 4.0 {
        let u = (u1 - 4.0).sqrt();
        let theta = 2.0_f64.atan2(u);
        let t = mod2pi(t1 + theta);
        let v = mod2pi(t - phi);
        if t >= -ZERO && v >= -ZERO {
            return Some([t, u, v]);
        }
    }
    None
}

fn lp_rm_l(x: f64, y: f64, phi: f64) -> Option<[f64; 3]> {
    let xi = x - phi.sin();
    let eta = y - 1.0 + phi.cos();
    let (u1, theta) = polar(xi, eta);
    if u1 <= 4.0 {
        let u = -2.0 * (0.25 * u1).asin();
        let t = mod2pi(theta + 0.5 * u + PI);
        let v = mod2pi(phi - t + u);
        if t >= -ZERO && u <= ZERO {
            return Some([t, u, v]);
        }
    }
    None
}

fn lp_rup_lum_rm(x: f64, y: f64, phi: f64) -> Option<[f64; 3]> {
    let xi = x + phi.sin();
    let eta = y - 1.0 - phi.cos();
    let rho = 0.25 * (2.0 + xi.hypot(eta));
    if rho <= 1.0 {
        let u = rho.acos();
        let (t, v) = tau_omega(u, -u, xi, eta, phi);
        if t >= -ZERO && v <= ZERO {
            return Some([t, u, v]);
        }
    }
    None
}

fn lp_rum_lum_rp(x: f64, y: f64, phi: f64) -> Option<[f64; 3]> {
    let xi = x + phi.sin();
    let eta = y - 1.0 - phi.cos();
    let rho = (20.0 - xi * xi - eta * eta) / 16.0;
    if (0.0..=1.0).contains(&rho) {
        let u = -rho.acos();
        if u >= -FRAC_PI_2 {
            let (t, v) = tau_omega(u, u, xi, eta, phi);
            if t >= -ZERO && v >= -ZERO {
                return Some([t, u, v]);
            }
        }
    }
    None
}

fn lp_rm_sm_lm(x: f64, y: f64, phi: f64) -> Option<[f64; 3]> {
    let xi = x - phi.sin();
    let eta = y - 1.0 + phi.cos();
    let (rho, theta) = polar(xi, eta);
    if rho >= 2.0 {
        let r = (rho * rho - 4.0).sqrt();
        let u = 2.0 - r;
        let t = mod2pi(theta + r.atan2(-2.0));
        let v = mod2pi(phi - FRAC_PI_2 - t);
        if t >= -ZERO && u <= ZERO && v <= ZERO {
            return Some([t, u, v]);
        }
    }
    None
}

fn lp_rm_sm_rm(x: f64, y: f64, phi: f64) -> Option<[f64; 3]> {
    let xi = x + phi.sin();
    let eta = y - 1.0 - phi.cos();
    let (rho, theta) = polar(-eta, xi);
    if rho >= 2.0 {
        let t = theta;
        let u = 2.0 - rho;
        let v = mod2pi(t + FRAC_PI_2 - phi);
        if t >= -ZERO && u <= ZERO && v <= ZERO {
            return Some([t, u, v]);
        }
    }
    None
}

fn lp_rm_s_lm_rp(x: f64, y: f64, phi: f64) -> Option<[f64; 3]> {
    let xi = x + phi.sin();
    let eta = y - 1.0 - phi.cos();
    let (rho, _) = polar(xi, eta);
    if rho >= 2.0 {
        let u = 4.0 - (rho * rho - 4.0).sqrt();
        if u <= ZERO {
            let t = mod2pi(((4.0 - u) * xi - 2.0 * eta).atan2(-2.0 * xi + (u - 4.0) * eta));
            let v = mod2pi(t - phi);
            if t >= -ZERO && v >= -ZERO {
                return Some([t, u, v]);
            }
        }
    }
    None
}

use Steer::{Left as L, Right as R, Straight as S};

/// Collects words in unit-radius coordinates.
struct Words(Vec<Vec<(Steer, f64)>>);

impl Words {
    fn add(&mut self, steers: &[Steer], lengths: &[f64]) {
        self.0.push(steers.iter().copied().zip(lengths.iter().copied()).collect());
    }
}

/// Generic variant expansion: time flip (x -> -x, phi -> -phi, lengths
/// negated) and reflection (y -> -y, phi -> -phi, left/right swapped).
fn variants(
    words: &mut Words,
    x: f64,
    y: f64,
    phi: f64,
    f: fn(f64, f64, f64) -> Option<[f64; 3]>,
    word: &[Steer],
    lengths: impl Fn([f64; 3]) -> Vec<f64>,
) {
    let reflect = |w: &[Steer]| -> Vec<Steer> {
        w.iter()
            .map(|s| match s {
                L => R,
                R => L,
                S => S,
            })
            .collect()
    };
    let neg = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|l| -l).collect() };
    if let Some(p) = f(x, y, phi) {
        words.add(word, &lengths(p));
    }
    if let Some(p) = f(-x, y, -phi) {
        words.add(word, &neg(lengths(p)));
    }
    let refl = reflect(word);
    if let Some(p) = f(x, -y, -phi) {
        words.add(&refl, &lengths(p));
    }
    if let Some(p) = f(-x, -y, phi) {
        words.add(&refl, &neg(lengths(p)));
    }
}

fn enumerate_unit(x: f64, y: f64, phi: f64) -> Words {
    let mut w = Words(Vec::new());
    let (c, s) = (phi.cos(), phi.sin());
    let xb = x * c + y * s;
    let yb = x * s - y * c;
    let h = FRAC_PI_2;

    // CSC
    variants(&mut w, x, y, phi, lp_sp_lp, &[L, S, L], |p| p.to_vec());
    variants(&mut w, x, y, phi, lp_sp_rp, &[L, S, R], |p| p.to_vec());
    // CCC, forward and backward
    variants(&mut w, x, y, phi, lp_rm_l, &[L, R, L], |p| p.to_vec());
    variants(&mut w, xb, yb, phi, lp_rm_l, &[L, R, L], |p| vec![p[2], p[1], p[0]]);
    // CCCC
    variants(&mut w, x, y, phi, lp_rup_lum_rm, &[L, R, L, R], |p| vec![p[0], p[1], -p[1], p[2]]);
    variants(&mut w, x, y, phi, lp_rum_lum_rp, &[L, R, L, R], |p| vec![p[0], p[1], p[1], p[2]]);
    // CCSC, forward and backward
    variants(&mut w, x, y, phi, lp_rm_sm_lm, &[L, R, S, L], |p| vec![p[0], -h, p[1], p[2]]);
    variants(&mut w, x, y, phi, lp_rm_sm_rm, &[L, R, S, R], |p| vec![p[0], -h, p[1], p[2]]);
    variants(&mut w, xb, yb, phi, lp_rm_sm_lm, &[L, S, R, L], |p| vec![p[2], p[1], -h, p[0]]);
    variants(&mut w, xb, yb, phi, lp_rm_sm_rm, &[R, S, R, L], |p| vec![p[2], p[1], -h, p[0]]);
    // CCSCC
    variants(&mut w, x, y, phi, lp_rm_s_lm_rp, &[L, R, S, L, R], |p| {
        vec![p[0], -h, p[1], -h, p[2]]
    });
    w
}

/// Every candidate path from `start` to `goal` that actually reaches the
/// goal (checked by integration), shortest first.
pub fn candidate_paths(start: (f64, f64, f64), goal: (f64, f64, f64), radius: f64) -> Vec<RsPath> {
    let (dx, dy) = (goal.0 - start.0, goal.1 - start.1);
    let (s, c) = start.2.sin_cos();
    let x = (c * dx + s * dy) / radius;
    let y = (-s * dx + c * dy) / radius;
    let phi = goal.2 - start.2;
    let words = enumerate_unit(x, y, phi);
    let tol = 1e-6 * radius.max(1.0);
    let mut out: Vec<RsPath> = words
        .0
        .into_iter()
        .map(|word| RsPath {
            segments: word
                .into_iter()
                .map(|(steer, l)| RsSegment {
                    steer,
                    length: l * radius,
                })
                .collect(),
            radius,
        })
        .filter(|p| {
            let e = p.end_pose(start);
            (e.0 - goal.0).hypot(e.1 - goal.1) < tol && crate::vehicle::angle_diff(e.2, goal.2).abs() < 1e-6
        })
        .collect();
    out.sort_by(|a, b| a.length().total_cmp(&b.length()));
    out
}

pub fn shortest_path(start: (f64, f64, f64), goal: (f64, f64, f64), radius: f64) -> Option<RsPath> {
    candidate_paths(start, goal, radius).into_iter().next()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn straight_ahead_is_a_straight_line() {
        let p = shortest_path((0.0, 0.0, 0.0), (10.0, 0.0, 0.0), 5.0).unwrap();
        assert!((p.length() - 10.0).abs() < 1e-9);
        let back = shortest_path((0.0, 0.0, 0.0), (-4.0, 0.0, 0.0), 5.0).unwrap();
        assert!((back.length() - 4.0).abs() < 1e-9);
        assert!(back.segments.iter().all(|s| s.length <= 1e-12));
    }

    #[test]
    fn quarter_turn_is_an_arc() {
        let r = 2.0;
        let p = shortest_path((0.0, 0.0, 0.0), (r, r, FRAC_PI_2), r).unwrap();
        assert!((p.length() - FRAC_PI_2 * r).abs() < 1e-9);
    }

    #[test]
    fn random_queries_always_have_a_valid_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let goal = (
                rng.gen_range(-15.0..15.0),
                rng.gen_range(-15.0..15.0),
                rng.gen_range(-PI..PI),
            );
            let start = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-PI..PI));
            let paths = candidate_paths(start, goal, 5.1);
            assert!(!paths.is_empty(), "no path to {goal:?}");
            let best = paths[0].length();
            let euclid = (goal.0 - start.0).hypot(goal.1 - start.1);
            assert!(best + 1e-9 >= euclid);
            let samples = paths[0].sample(start, 0.3);
            let last = samples.last().unwrap();
            assert!((last.0 - goal.0).hypot(last.1 - goal.1) < 1e-5);
            for w in samples.windows(2) {
                assert!((w[1].0 - w[0].0).hypot(w[1].1 - w[0].1) <= 0.3 + 1e-9);
            }
        }
    }

    #[test]
    fn reversed_query_has_equal_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let a = (rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0), rng.gen_range(-PI..PI));
            let b = (rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0), rng.gen_range(-PI..PI));
            let ab = shortest_path(a, b, 3.0).unwrap().length();
            let ba = shortest_path(b, a, 3.0).unwrap().length();
            assert!((ab - ba).abs() < 1e-6, "{ab} vs {ba}");
        }
    }
}
