//! Convex polygons in halfspace form, rigid pose transforms and an exact
//! polygon-to-polygon distance used to audit dual distance certificates.
//!
//! Every polygon keeps both representations: the outward unit normals and
//! offsets (`A z <= b`) consumed by the optimizer, and the CCW vertex list
//! used by the separating-axis test and the brute-force distance.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vehicle::VehicleState;

/// Relative tolerance used when classifying vertex turns.
const TURN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn from_vector(v: Vector2<f64>) -> Self {
        Self::new(v.x, v.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl From<(f64, f64)> for Point2 {
    fn from((x, y): (f64, f64)) -> Self {
        Self::new(x, y)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("vertices {0}, {1}, {2} are collinear")]
    CollinearVertices(usize, usize, usize),
    #[error("polygon is not strictly convex in counter-clockwise order at vertex {0}")]
    NonConvex(usize),
    #[error("segment endpoints coincide")]
    ZeroLengthSegment,
    #[error("thickness must be positive, got {0}")]
    NonPositiveThickness(f64),
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("invalid footprint: {0}")]
    InvalidFootprint(String),
}

/// Obstacle taxonomy: road-boundary segments versus agents (vehicles,
/// pedestrians).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleKind {
    BoundaryA,
    AgentB,
}

/// Bounded convex polygon `{z : A z <= b}` with unit-length outward normals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexObstacle {
    /// Rows of `A`, one per edge, in CCW edge order.
    pub normals: Vec<[f64; 2]>,
    /// Entries of `b`.
    pub offsets: Vec<f64>,
    pub kind: ObstacleKind,
    /// CCW vertices; vertex `i` is the start of edge `i`.
    pub vertices: Vec<Point2>,
}

impl ConvexObstacle {
    pub fn num_halfspaces(&self) -> usize {
        self.normals.len()
    }

    pub fn normal(&self, i: usize) -> Vector2<f64> {
        Vector2::new(self.normals[i][0], self.normals[i][1])
    }

    /// `A^T lambda`.
    pub fn a_transpose_times(&self, lambda: &[f64]) -> Vector2<f64> {
        debug_assert_eq!(lambda.len(), self.normals.len());
        self.normals
            .iter()
            .zip(lambda)
            .fold(Vector2::zeros(), |acc, (n, l)| acc + Vector2::new(n[0], n[1]) * *l)
    }

    /// `A t - b`.
    pub fn offset_residuals(&self, t: Vector2<f64>) -> Vec<f64> {
        self.normals
            .iter()
            .zip(&self.offsets)
            .map(|(n, b)| n[0] * t.x + n[1] * t.y - b)
            .collect()
    }

    pub fn contains(&self, p: Point2, tol: f64) -> bool {
        self.normals
            .iter()
            .zip(&self.offsets)
            .all(|(n, b)| n[0] * p.x + n[1] * p.y <= b + tol)
    }

    /// Recovers the vertex list by intersecting consecutive edge lines.
    pub fn vertices_from_halfspaces(&self) -> Vec<Point2> {
        let n = self.normals.len();
        (0..n)
            .map(|i| {
                let prev = (i + n - 1) % n;
                let m = Matrix2::new(
                    self.normals[prev][0],
                    self.normals[prev][1],
                    self.normals[i][0],
                    self.normals[i][1],
                );
                let rhs = Vector2::new(self.offsets[prev], self.offsets[i]);
                let p = m.try_inverse().expect("adjacent edges are not parallel") * rhs;
                Point2::from_vector(p)
            })
            .collect()
    }

    pub fn bounding_box(&self) -> (Point2, Point2) {
        bounding_box(&self.vertices)
    }

    /// Rigidly moves the polygon (used for placing the vehicle body).
    pub fn transformed(&self, pose: &PoseTransform) -> ConvexObstacle {
        let vertices: Vec<Point2> = self.vertices.iter().map(|v| pose.apply(*v)).collect();
        let normals: Vec<[f64; 2]> = self
            .normals
            .iter()
            .map(|n| {
                let r = pose.rotation * Vector2::new(n[0], n[1]);
                [r.x, r.y]
            })
            .collect();
        let offsets = self
            .offsets
            .iter()
            .zip(&normals)
            .map(|(b, n)| b + n[0] * pose.translation.x + n[1] * pose.translation.y)
            .collect();
        ConvexObstacle {
            normals,
            offsets,
            kind: self.kind,
            vertices,
        }
    }
}

pub(crate) fn bounding_box(points: &[Point2]) -> (Point2, Point2) {
    let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        lo.x = lo.x.min(p.x);
        lo.y = lo.y.min(p.y);
        hi.x = hi.x.max(p.x);
        hi.y = hi.y.max(p.y);
    }
    (lo, hi)
}

fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Builds the halfspace form of a strictly convex CCW polygon.
pub fn polygon_from_vertices(
    vertices: &[Point2],
    kind: ObstacleKind,
) -> Result<ConvexObstacle, GeometryError> {
    let n = vertices.len();
    if n < 3 {
        return Err(GeometryError::TooFewVertices(n));
    }
    if vertices.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    let scale = vertices
        .iter()
        .map(|v| v.x.abs().max(v.y.abs()))
        .fold(1.0_f64, f64::max);
    let mut winding = 0.0;
    for i in 0..n {
        let a = vertices[(i + n - 1) % n];
        let b = vertices[i];
        let c = vertices[(i + 1) % n];
        let turn = cross(a, b, c);
        let tol = TURN_EPS * scale * scale;
        if turn.abs() <= tol {
            return Err(GeometryError::CollinearVertices((i + n - 1) % n, i, (i + 1) % n));
        }
        if turn < 0.0 {
            return Err(GeometryError::NonConvex(i));
        }
        let e0 = (b.x - a.x, b.y - a.y);
        let e1 = (c.x - b.x, c.y - b.y);
        winding += (e0.0 * e1.1 - e0.1 * e1.0).atan2(e0.0 * e1.0 + e0.1 * e1.1);
    }
    // A star-shaped self-intersecting loop has only left turns but winds twice.
    if (winding - std::f64::consts::TAU).abs() > 1e-6 {
        return Err(GeometryError::NonConvex(0));
    }

    let mut normals = Vec::with_capacity(n);
    let mut offsets = Vec::with_capacity(n);
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        let (ex, ey) = (b.x - a.x, b.y - a.y);
        let len = ex.hypot(ey);
        let normal = [ey / len, -ex / len];
        offsets.push(normal[0] * a.x + normal[1] * a.y);
        normals.push(normal);
    }
    Ok(ConvexObstacle {
        normals,
        offsets,
        kind,
        vertices: vertices.to_vec(),
    })
}

/// Thin rectangle of the given thickness centred on a boundary segment.
pub fn segment_to_obstacle(
    p0: Point2,
    p1: Point2,
    thickness: f64,
) -> Result<ConvexObstacle, GeometryError> {
    if !(p0.is_finite() && p1.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    if !(thickness > 0.0) {
        return Err(GeometryError::NonPositiveThickness(thickness));
    }
    let len = p0.distance(p1);
    if len <= f64::EPSILON * (1.0 + p0.x.abs().max(p0.y.abs())) {
        return Err(GeometryError::ZeroLengthSegment);
    }
    let (ex, ey) = ((p1.x - p0.x) / len, (p1.y - p0.y) / len);
    let h = 0.5 * thickness;
    let (nx, ny) = (-ey * h, ex * h);
    let corners = [
        Point2::new(p0.x - nx, p0.y - ny),
        Point2::new(p1.x - nx, p1.y - ny),
        Point2::new(p1.x + nx, p1.y + ny),
        Point2::new(p0.x + nx, p0.y + ny),
    ];
    polygon_from_vertices(&corners, ObstacleKind::BoundaryA)
}

/// Rectangular vehicle body `{y : G y <= g}` in the rear-axle frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleFootprint {
    pub length: f64,
    pub width: f64,
    /// Longitudinal offset from the rear axle to the geometric centre.
    pub rear_axle_to_center: f64,
    pub body_normals: [[f64; 2]; 4],
    pub body_offsets: [f64; 4],
}

impl VehicleFootprint {
    pub fn new(length: f64, width: f64, rear_axle_to_center: f64) -> Result<Self, GeometryError> {
        if !(length > 0.0 && width > 0.0) {
            return Err(GeometryError::InvalidFootprint(format!(
                "length {length} and width {width} must be positive"
            )));
        }
        if rear_axle_to_center.abs() >= 0.5 * length {
            return Err(GeometryError::InvalidFootprint(
                "rear axle must lie inside the body".into(),
            ));
        }
        let body = Self::body_corners(length, width, rear_axle_to_center);
        let poly = polygon_from_vertices(&body, ObstacleKind::AgentB)?;
        let mut body_normals = [[0.0; 2]; 4];
        let mut body_offsets = [0.0; 4];
        body_normals.copy_from_slice(&poly.normals);
        body_offsets.copy_from_slice(&poly.offsets);
        Ok(Self {
            length,
            width,
            rear_axle_to_center,
            body_normals,
            body_offsets,
        })
    }

    fn body_corners(length: f64, width: f64, c: f64) -> [Point2; 4] {
        let (back, front) = (c - 0.5 * length, c + 0.5 * length);
        let h = 0.5 * width;
        [
            Point2::new(back, -h),
            Point2::new(front, -h),
            Point2::new(front, h),
            Point2::new(back, h),
        ]
    }

    /// `G^T mu`.
    pub fn g_transpose_times(&self, mu: &[f64]) -> Vector2<f64> {
        self.body_normals
            .iter()
            .zip(mu)
            .fold(Vector2::zeros(), |acc, (n, m)| acc + Vector2::new(n[0], n[1]) * *m)
    }

    /// `g^T mu`.
    pub fn g_dot(&self, mu: &[f64]) -> f64 {
        self.body_offsets.iter().zip(mu).map(|(g, m)| g * m).sum()
    }

    pub fn body_polygon(&self) -> ConvexObstacle {
        let corners = Self::body_corners(self.length, self.width, self.rear_axle_to_center);
        ConvexObstacle {
            normals: self.body_normals.to_vec(),
            offsets: self.body_offsets.to_vec(),
            kind: ObstacleKind::AgentB,
            vertices: corners.to_vec(),
        }
    }

    /// The body placed at a vehicle state.
    pub fn at(&self, state: &VehicleState) -> ConvexObstacle {
        self.body_polygon().transformed(&pose_transform(state))
    }

    /// Radius of the smallest rear-axle-centred disc containing the body.
    pub fn bounding_radius(&self) -> f64 {
        Self::body_corners(self.length, self.width, self.rear_axle_to_center)
            .iter()
            .map(|p| p.x.hypot(p.y))
            .fold(0.0, f64::max)
    }
}

/// Rigid body-to-world map `y -> R y + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseTransform {
    pub rotation: Matrix2<f64>,
    pub translation: Vector2<f64>,
}

impl PoseTransform {
    pub fn apply(&self, p: Point2) -> Point2 {
        Point2::from_vector(self.rotation * p.to_vector() + self.translation)
    }
}

pub fn pose_transform(state: &VehicleState) -> PoseTransform {
    let (s, c) = state.phi.sin_cos();
    PoseTransform {
        rotation: Matrix2::new(c, -s, s, c),
        translation: Vector2::new(state.x, state.y),
    }
}

/// Largest gap along any edge normal of either polygon. Positive means the
/// polygons are disjoint; otherwise its negation is the penetration depth.
pub fn separating_gap(p: &ConvexObstacle, q: &ConvexObstacle) -> f64 {
    fn one_way(p: &ConvexObstacle, q: &ConvexObstacle) -> f64 {
        p.normals
            .iter()
            .zip(&p.offsets)
            .map(|(n, b)| {
                q.vertices
                    .iter()
                    .map(|v| n[0] * v.x + n[1] * v.y)
                    .fold(f64::INFINITY, f64::min)
                    - b
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
    one_way(p, q).max(one_way(q, p))
}

pub fn intersects(p: &ConvexObstacle, q: &ConvexObstacle) -> bool {
    separating_gap(p, q) <= 0.0
}

/// Overlap depth of two polygons, zero when they are disjoint or touching.
pub fn penetration_depth(p: &ConvexObstacle, q: &ConvexObstacle) -> f64 {
    (-separating_gap(p, q)).max(0.0)
}

fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let (abx, aby) = (b.x - a.x, b.y - a.y);
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 {
        (((p.x - a.x) * abx + (p.y - a.y) * aby) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p.x - a.x - t * abx).hypot(p.y - a.y - t * aby)
}

/// Euclidean distance between two convex polygons; zero if they intersect.
pub fn polygon_distance(p: &ConvexObstacle, q: &ConvexObstacle) -> f64 {
    if intersects(p, q) {
        return 0.0;
    }
    fn vertex_edge(p: &ConvexObstacle, q: &ConvexObstacle) -> f64 {
        let n = q.vertices.len();
        p.vertices
            .iter()
            .flat_map(|v| {
                (0..n).map(move |i| point_segment_distance(*v, q.vertices[i], q.vertices[(i + 1) % n]))
            })
            .fold(f64::INFINITY, f64::min)
    }
    vertex_edge(p, q).min(vertex_edge(q, p))
}

/// Value of the dual distance certificate `-g^T mu + (A t - b)^T lambda`
/// for the vehicle body at `state` against `obstacle`.
pub fn certificate_value(
    footprint: &VehicleFootprint,
    state: &VehicleState,
    obstacle: &ConvexObstacle,
    lambda: &[f64],
    mu: &[f64],
) -> f64 {
    let t = Vector2::new(state.x, state.y);
    let residuals = obstacle.offset_residuals(t);
    -footprint.g_dot(mu) + residuals.iter().zip(lambda).map(|(r, l)| r * l).sum::<f64>()
}

/// `G^T mu + R^T A^T lambda`, which vanishes for a valid certificate.
pub fn certificate_balance(
    footprint: &VehicleFootprint,
    state: &VehicleState,
    obstacle: &ConvexObstacle,
    lambda: &[f64],
    mu: &[f64],
) -> Vector2<f64> {
    let pose = pose_transform(state);
    footprint.g_transpose_times(mu) + pose.rotation.transpose() * obstacle.a_transpose_times(lambda)
}
