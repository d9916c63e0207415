//! Holonomic distance-to-goal on an 8-connected occupancy grid.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::geometry::{ConvexObstacle, Point2};

#[derive(Debug, Clone)]
pub struct DistanceField {
    origin: Point2,
    resolution: f64,
    nx: usize,
    ny: usize,
    dist: Vec<f64>,
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl DistanceField {
    /// Dijkstra from `goal` over cells whose centres lie outside every
    /// obstacle. Cells that cannot reach the goal keep an infinite distance.
    pub fn new(
        lo: Point2,
        hi: Point2,
        resolution: f64,
        obstacles: &[ConvexObstacle],
        goal: Point2,
    ) -> Self {
        let nx = (((hi.x - lo.x) / resolution).ceil() as usize).max(1);
        let ny = (((hi.y - lo.y) / resolution).ceil() as usize).max(1);
        let mut blocked = vec![false; nx * ny];
        for (idx, b) in blocked.iter_mut().enumerate() {
            let c = Point2::new(
                lo.x + (idx % nx) as f64 * resolution + 0.5 * resolution,
                lo.y + (idx / nx) as f64 * resolution + 0.5 * resolution,
            );
            *b = obstacles.iter().any(|o| o.contains(c, 0.0));
        }
        let mut field = Self {
            origin: lo,
            resolution,
            nx,
            ny,
            dist: vec![f64::INFINITY; nx * ny],
        };
        let Some(start) = field.cell(goal) else {
            return field;
        };
        field.dist[start] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(Entry(0.0, start));
        let diag = resolution * std::f64::consts::SQRT_2;
        while let Some(Entry(d, idx)) = heap.pop() {
            if d > field.dist[idx] {
                continue;
            }
            let (cx, cy) = ((idx % nx) as i64, (idx / nx) as i64);
            for (ox, oy) in [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)] {
                let (x, y) = (cx + ox, cy + oy);
                if x < 0 || y < 0 || x >= nx as i64 || y >= ny as i64 {
                    continue;
                }
                let j = y as usize * nx + x as usize;
                if blocked[j] {
                    continue;
                }
                let step = if ox != 0 && oy != 0 { diag } else { resolution };
                let nd = d + step;
                if nd < field.dist[j] {
                    field.dist[j] = nd;
                    heap.push(Entry(nd, j));
                }
            }
        }
        field
    }

    fn cell(&self, p: Point2) -> Option<usize> {
        let fx = ((p.x - self.origin.x) / self.resolution).floor();
        let fy = ((p.y - self.origin.y) / self.resolution).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.nx as f64 || fy >= self.ny as f64 {
            return None;
        }
        Some(fy as usize * self.nx + fx as usize)
    }

    /// Grid distance discounted by one diagonal so it stays a lower bound for
    /// points anywhere inside their cells.
    pub fn distance(&self, p: Point2) -> f64 {
        match self.cell(p) {
            Some(i) if self.dist[i].is_finite() => {
                (self.dist[i] - self.resolution * std::f64::consts::SQRT_2).max(0.0)
            }
            Some(_) => f64::INFINITY,
            None => 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{polygon_from_vertices, ObstacleKind};

    #[test]
    fn open_field_distance_is_near_euclidean() {
        let f = DistanceField::new(
            Point2::new(-5.0, -5.0),
            Point2::new(5.0, 5.0),
            0.25,
            &[],
            Point2::new(0.0, 0.0),
        );
        let d = f.distance(Point2::new(4.0, 0.1));
        assert!(d <= 4.0 && d > 3.3, "{d}");
    }

    #[test]
    fn wall_forces_detour() {
        let wall = polygon_from_vertices(
            &[
                Point2::new(-0.5, -4.0),
                Point2::new(0.5, -4.0),
                Point2::new(0.5, 5.0),
                Point2::new(-0.5, 5.0),
            ],
            ObstacleKind::BoundaryA,
        )
        .unwrap();
        let f = DistanceField::new(
            Point2::new(-5.0, -5.0),
            Point2::new(5.0, 5.0),
            0.25,
            &[wall],
            Point2::new(3.0, 0.0),
        );
        assert!(f.distance(Point2::new(-3.0, 0.0)) > 9.0);
    }
}
