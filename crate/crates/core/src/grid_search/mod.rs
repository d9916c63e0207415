//! Hybrid A* over `(x, y, phi)` with forward and reverse arc primitives and
//! Reeds–Shepp analytic expansion toward the goal.

pub mod heuristic;
pub mod reeds_shepp;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{bounding_box, separating_gap, ConvexObstacle, Point2, VehicleFootprint};
use crate::vehicle::{angle_diff, VehicleLimits, VehicleState};
use heuristic::DistanceField;
use reeds_shepp::{advance, candidate_paths, RsPath, Steer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gear {
    Forward,
    Reverse,
}

impl Gear {
    pub fn sign(self) -> f64 {
        match self {
            Gear::Forward => 1.0,
            Gear::Reverse => -1.0,
        }
    }

    fn from_forward(forward: bool) -> Self {
        if forward {
            Gear::Forward
        } else {
            Gear::Reverse
        }
    }
}

/// A pose on the coarse path, tagged with the gear of the motion that
/// arrives at it (the start takes the gear of the first motion).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoarsePathPoint {
    pub x: f64,
    pub y: f64,
    pub phi: f64,
    pub gear: Gear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GearSegment {
    pub gear: Gear,
    pub points: Vec<CoarsePathPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub xy_resolution: f64,
    pub phi_resolution: f64,
    pub primitive_arc: f64,
    pub steering_samples: usize,
    pub reverse_penalty: f64,
    pub gear_switch_penalty: f64,
    pub analytic_expansion: bool,
    /// Cost per radian of steering change between consecutive primitives.
    pub steer_change_penalty: f64,
    /// Clearance kept from obstacles, reduced automatically when the start
    /// or goal sits closer than this.
    pub collision_margin: f64,
    /// Padding around obstacles, start and goal when no region is given.
    pub region_margin: f64,
    pub max_expansions: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            xy_resolution: 0.3,
            phi_resolution: 5.0_f64.to_radians(),
            primitive_arc: 0.5,
            steering_samples: 7,
            reverse_penalty: 1.5,
            gear_switch_penalty: 3.0,
            analytic_expansion: true,
            steer_change_penalty: 0.2,
            collision_margin: 0.1,
            region_margin: 10.0,
            max_expansions: 150_000,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<(), GridSearchError> {
        let positive = [
            self.xy_resolution,
            self.phi_resolution,
            self.primitive_arc,
            self.reverse_penalty,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(GridSearchError::InvalidConfig("resolutions and arc must be positive".into()));
        }
        if self.steering_samples < 3 || self.steering_samples % 2 == 0 {
            return Err(GridSearchError::InvalidConfig("steering_samples must be odd and >= 3".into()));
        }
        if !(self.gear_switch_penalty >= 0.0
            && self.steer_change_penalty >= 0.0
            && self.collision_margin >= 0.0
            && self.region_margin >= 0.0)
        {
            return Err(GridSearchError::InvalidConfig("penalties and margins must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridSearchError {
    #[error("invalid grid configuration: {0}")]
    InvalidConfig(String),
    #[error("start pose is in collision")]
    StartInCollision,
    #[error("goal pose is in collision")]
    GoalInCollision,
    #[error("no path found after {0} expansions")]
    NoPathFound(usize),
    #[error("empty path")]
    EmptyPath,
}

/// Maximal runs of equal gear; concatenating the segments gives the path.
pub fn partition_by_gear(path: &[CoarsePathPoint]) -> Result<Vec<GearSegment>, GridSearchError> {
    let mut out: Vec<GearSegment> = Vec::new();
    for p in path {
        match out.last_mut() {
            Some(seg) if seg.gear == p.gear => seg.points.push(*p),
            _ => out.push(GearSegment {
                gear: p.gear,
                points: vec![*p],
            }),
        }
    }
    if out.is_empty() {
        return Err(GridSearchError::EmptyPath);
    }
    Ok(out)
}

/// The geometric polyline driven in each segment: its points preceded by the
/// last point of the previous segment (the cusp it starts from).
pub fn segment_polylines(segments: &[GearSegment]) -> Vec<Vec<CoarsePathPoint>> {
    segments
        .iter()
        .enumerate()
        .map(|(j, seg)| {
            let mut pts = Vec::with_capacity(seg.points.len() + 1);
            if j > 0 {
                let mut cusp = *segments[j - 1].points.last().unwrap();
                cusp.gear = seg.gear;
                pts.push(cusp);
            }
            pts.extend(seg.points.iter().copied());
            pts
        })
        .collect()
}

/// Collision checker with a bounding-disc prefilter.
pub struct CollisionChecker<'a> {
    obstacles: &'a [ConvexObstacle],
    boxes: Vec<(Point2, Point2)>,
    footprint: &'a VehicleFootprint,
    radius: f64,
}

impl<'a> CollisionChecker<'a> {
    pub fn new(obstacles: &'a [ConvexObstacle], footprint: &'a VehicleFootprint) -> Self {
        Self {
            obstacles,
            boxes: obstacles.iter().map(|o| o.bounding_box()).collect(),
            footprint,
            radius: footprint.bounding_radius(),
        }
    }

    /// Smallest separating-axis gap to any obstacle, capped at `cap`.
    pub fn clearance(&self, x: f64, y: f64, phi: f64, cap: f64) -> f64 {
        let mut body = None;
        let mut best = cap;
        for (o, (lo, hi)) in self.obstacles.iter().zip(&self.boxes) {
            let dx = (lo.x - x).max(x - hi.x).max(0.0);
            let dy = (lo.y - y).max(y - hi.y).max(0.0);
            if dx.hypot(dy) - self.radius >= best {
                continue;
            }
            let body = body.get_or_insert_with(|| self.footprint.at(&VehicleState::new(x, y, 0.0, phi)));
            best = best.min(separating_gap(body, o));
        }
        best
    }

    pub fn is_free(&self, x: f64, y: f64, phi: f64, margin: f64) -> bool {
        self.clearance(x, y, phi, margin + 1.0) > margin
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    x: f64,
    y: f64,
    phi: f64,
    g: f64,
    gear: Gear,
    steer: f64,
    parent: usize,
}

const ROOT: usize = usize::MAX;

#[derive(PartialEq)]
struct OpenEntry {
    f: f64,
    h: f64,
    counter: u64,
    node: usize,
}

impl Eq for OpenEntry {}

impl Ord for OpenEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.h.total_cmp(&self.h))
            .then_with(|| other.counter.cmp(&self.counter))
    }
}

impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Search<'a> {
    config: &'a GridConfig,
    checker: CollisionChecker<'a>,
    field: DistanceField,
    lo: Point2,
    hi: Point2,
    goal: (f64, f64, f64),
    radius: f64,
    margin: f64,
    n_phi: i64,
}

impl Search<'_> {
    fn key(&self, x: f64, y: f64, phi: f64) -> (i64, i64, i64) {
        let ix = ((x - self.lo.x) / self.config.xy_resolution).floor() as i64;
        let iy = ((y - self.lo.y) / self.config.xy_resolution).floor() as i64;
        let ip = (phi.rem_euclid(2.0 * PI) / self.config.phi_resolution).round() as i64 % self.n_phi;
        (ix, iy, ip)
    }

    fn in_region(&self, x: f64, y: f64) -> bool {
        x >= self.lo.x && x <= self.hi.x && y >= self.lo.y && y <= self.hi.y
    }

    fn pose_ok(&self, p: (f64, f64, f64)) -> bool {
        self.in_region(p.0, p.1) && self.checker.is_free(p.0, p.1, p.2, self.margin)
    }

    fn heuristic(&self, x: f64, y: f64, phi: f64) -> f64 {
        let grid = self.field.distance(Point2::new(x, y));
        let rs = reeds_shepp::shortest_path((x, y, phi), self.goal, self.radius)
            .map_or(0.0, |p| p.length());
        grid.max(rs)
    }

    fn path_cost(&self, path: &RsPath, start_gear: Option<Gear>) -> f64 {
        let mut cost = 0.0;
        let mut gear = start_gear;
        for s in path.segments.iter().filter(|s| s.length.abs() > 1e-9) {
            let g = Gear::from_forward(s.length > 0.0);
            cost += s.length.abs() * if g == Gear::Reverse { self.config.reverse_penalty } else { 1.0 };
            if gear.is_some_and(|prev| prev != g) {
                cost += self.config.gear_switch_penalty;
            }
            gear = Some(g);
        }
        cost
    }

    /// Shortest (by penalized cost) collision-free Reeds–Shepp completion.
    fn analytic(&self, node: &Node, has_motion: bool) -> Option<Vec<(f64, f64, f64, bool)>> {
        let start = (node.x, node.y, node.phi);
        let gear = has_motion.then_some(node.gear);
        let mut cands: Vec<(f64, RsPath)> = candidate_paths(start, self.goal, self.radius)
            .into_iter()
            .map(|p| (self.path_cost(&p, gear), p))
            .collect();
        cands.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (_, path) in cands.into_iter().take(4) {
            let samples = path.sample(start, 0.1);
            if samples.iter().all(|s| self.pose_ok((s.0, s.1, s.2))) {
                return Some(samples);
            }
        }
        None
    }
}

/// Collision-free coarse path from `x0` to `xf` (velocities ignored).
pub fn plan_coarse_path(
    obstacles: &[ConvexObstacle],
    footprint: &VehicleFootprint,
    x0: &VehicleState,
    xf: &VehicleState,
    limits: &VehicleLimits,
    config: &GridConfig,
    region: Option<(Point2, Point2)>,
) -> Result<Vec<CoarsePathPoint>, GridSearchError> {
    config.validate()?;
    let checker = CollisionChecker::new(obstacles, footprint);
    let start_clear = checker.clearance(x0.x, x0.y, x0.phi, f64::INFINITY);
    if start_clear <= 0.0 {
        return Err(GridSearchError::StartInCollision);
    }
    let goal_clear = checker.clearance(xf.x, xf.y, xf.phi, f64::INFINITY);
    if goal_clear <= 0.0 {
        return Err(GridSearchError::GoalInCollision);
    }
    let margin = config.collision_margin.min(0.5 * start_clear).min(0.5 * goal_clear);

    let (lo, hi) = region.unwrap_or_else(|| {
        let mut pts: Vec<Point2> = obstacles.iter().flat_map(|o| o.vertices.iter().copied()).collect();
        pts.push(Point2::new(x0.x, x0.y));
        pts.push(Point2::new(xf.x, xf.y));
        let (lo, hi) = bounding_box(&pts);
        let m = config.region_margin;
        (Point2::new(lo.x - m, lo.y - m), Point2::new(hi.x + m, hi.y + m))
    });
    let goal = (xf.x, xf.y, xf.phi);
    let field = DistanceField::new(lo, hi, config.xy_resolution, obstacles, Point2::new(xf.x, xf.y));
    let radius = limits.min_turning_radius();
    let n_phi = ((2.0 * PI / config.phi_resolution).round() as i64).max(1);
    let search = Search {
        config,
        checker,
        field,
        lo,
        hi,
        goal,
        radius,
        margin,
        n_phi,
    };

    let max_steer = limits.max_steering();
    let n = config.steering_samples;
    let steers: Vec<f64> = (0..n)
        .map(|i| -max_steer + 2.0 * max_steer * i as f64 / (n - 1) as f64)
        .collect();
    let sub_steps = (config.primitive_arc / 0.1).ceil().max(1.0) as usize;

    let mut nodes = vec![Node {
        x: x0.x,
        y: x0.y,
        phi: x0.phi,
        g: 0.0,
        gear: Gear::Forward,
        steer: 0.0,
        parent: ROOT,
    }];
    let mut open = BinaryHeap::new();
    let mut counter = 0u64;
    open.push(OpenEntry {
        f: search.heuristic(x0.x, x0.y, x0.phi),
        h: 0.0,
        counter,
        node: 0,
    });
    let mut closed = HashSet::new();
    let mut best_g: HashMap<(i64, i64, i64), f64> = HashMap::new();
    let mut expansions = 0usize;

    while let Some(entry) = open.pop() {
        let idx = entry.node;
        let node = nodes[idx];
        let key = search.key(node.x, node.y, node.phi);
        if !closed.insert(key) {
            continue;
        }
        expansions += 1;
        if expansions > config.max_expansions {
            break;
        }
        let has_motion = node.parent != ROOT;

        let near_goal = (node.x - goal.0).hypot(node.y - goal.1) <= config.xy_resolution
            && angle_diff(node.phi, goal.2).abs() <= config.phi_resolution;
        if near_goal && has_motion {
            return Ok(reconstruct(&nodes, idx, &[]));
        }
        if config.analytic_expansion && (entry.h < 15.0 || expansions % 10 == 1) {
            if let Some(tail) = search.analytic(&node, has_motion) {
                return Ok(reconstruct(&nodes, idx, &tail));
            }
        }

        for forward in [true, false] {
            let gear = Gear::from_forward(forward);
            let arc = if forward { config.primitive_arc } else { -config.primitive_arc };
            for &delta in &steers {
                let curvature = delta.tan() / limits.wheelbase;
                let (steer, r) = if curvature.abs() < 1e-12 {
                    (Steer::Straight, 1.0)
                } else if curvature > 0.0 {
                    (Steer::Left, 1.0 / curvature)
                } else {
                    (Steer::Right, -1.0 / curvature)
                };
                let start = (node.x, node.y, node.phi);
                let mut ok = true;
                let mut end = start;
                for i in 1..=sub_steps {
                    end = advance(start, steer, arc * i as f64 / sub_steps as f64, r);
                    if !search.pose_ok(end) {
                        ok = false;
                        break;
                    }
                }
                if !ok {
                    continue;
                }
                let succ_key = search.key(end.0, end.1, end.2);
                if closed.contains(&succ_key) {
                    continue;
                }
                let mut g = node.g
                    + config.primitive_arc * if forward { 1.0 } else { config.reverse_penalty }
                    + config.steer_change_penalty * (delta - node.steer).abs();
                if has_motion && node.gear != gear {
                    g += config.gear_switch_penalty;
                }
                if best_g.get(&succ_key).is_some_and(|&b| b <= g) {
                    continue;
                }
                best_g.insert(succ_key, g);
                let h = search.heuristic(end.0, end.1, end.2);
                if !h.is_finite() {
                    continue;
                }
                nodes.push(Node {
                    x: end.0,
                    y: end.1,
                    phi: end.2,
                    g,
                    gear,
                    steer: delta,
                    parent: idx,
                });
                counter += 1;
                open.push(OpenEntry {
                    f: g + h,
                    h,
                    counter,
                    node: nodes.len() - 1,
                });
            }
        }
    }
    Err(GridSearchError::NoPathFound(expansions.min(config.max_expansions)))
}

fn reconstruct(nodes: &[Node], last: usize, tail: &[(f64, f64, f64, bool)]) -> Vec<CoarsePathPoint> {
    let mut chain = Vec::new();
    let mut i = last;
    while i != ROOT {
        chain.push(nodes[i]);
        i = nodes[i].parent;
    }
    chain.reverse();
    let mut out: Vec<CoarsePathPoint> = chain
        .iter()
        .map(|n| CoarsePathPoint {
            x: n.x,
            y: n.y,
            phi: n.phi,
            gear: n.gear,
        })
        .collect();
    // resample the analytic tail at roughly a primitive length
    let mut acc = 0.0;
    for w in tail.windows(2).enumerate() {
        let (i, w) = w;
        acc += (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
        let cusp = tail.get(i + 2).is_some_and(|next| next.3 != w[1].3);
        if acc >= 0.249 || cusp || i + 2 == tail.len() {
            out.push(CoarsePathPoint {
                x: w[1].0,
                y: w[1].1,
                phi: w[1].2,
                gear: Gear::from_forward(w[1].3),
            });
            acc = 0.0;
        }
    }
    if out.len() > 1 {
        out[0].gear = out[1].gear;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(gear: Gear) -> CoarsePathPoint {
        CoarsePathPoint {
            x: 0.0,
            y: 0.0,
            phi: 0.0,
            gear,
        }
    }

    #[test]
    fn run_length_partition() {
        use Gear::*;
        let path: Vec<_> = [Forward, Forward, Reverse, Reverse, Forward].into_iter().map(pt).collect();
        let segs = partition_by_gear(&path).unwrap();
        let lens: Vec<usize> = segs.iter().map(|s| s.points.len()).collect();
        assert_eq!(lens, vec![2, 2, 1]);
        let all: Vec<_> = segs.iter().flat_map(|s| s.points.clone()).collect();
        assert_eq!(all, path);
        assert_eq!(partition_by_gear(&[]), Err(GridSearchError::EmptyPath));
        assert_eq!(partition_by_gear(&[pt(Forward); 4]).unwrap().len(), 1);
        let polys = segment_polylines(&segs);
        assert_eq!(polys[1].len(), 3);
        assert_eq!(polys[1][0].gear, Reverse);
    }
}
