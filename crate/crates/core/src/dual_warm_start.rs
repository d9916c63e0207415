//! Dual warm start: one small relaxed QP per (obstacle, step) pair, the
//! scaling map onto the unit-norm dual cone and a checker for the bounds
//! relating the relaxed and exact problems.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    certificate_balance, certificate_value, polygon_distance, ConvexObstacle, VehicleFootprint,
};
use crate::qp_solver::{solve_qp, QpError, QpReport, QpStatus, QuadraticProgram};
use crate::vehicle::VehicleState;

/// Upper bound `d <= -EPS_D` standing in for `d < 0`.
pub const EPS_D: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DualError {
    #[error("no obstacles")]
    EmptyObstacleSet,
    #[error("no warm-start states")]
    EmptyTrajectory,
    #[error(transparent)]
    Solver(#[from] QpError),
    #[error("proposition violated: {0}")]
    PropositionViolated(String),
}

/// Multipliers for one obstacle at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualBlock {
    pub lambda: Vec<f64>,
    pub mu: [f64; 4],
    pub d: f64,
}

impl DualBlock {
    /// Constant initialization; `d` follows from the scalar equality.
    pub fn constant(
        value: f64,
        obstacle: &ConvexObstacle,
        footprint: &VehicleFootprint,
        state: &VehicleState,
    ) -> Self {
        let lambda = vec![value; obstacle.num_halfspaces()];
        let mu = [value; 4];
        let d = -certificate_value(footprint, state, obstacle, &lambda, &mu);
        Self { lambda, mu, d }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            lambda: self.lambda.iter().map(|l| l * factor).collect(),
            mu: self.mu.map(|m| m * factor),
            d: self.d * factor,
        }
    }

    /// `||A^T lambda||`.
    pub fn norm(&self, obstacle: &ConvexObstacle) -> f64 {
        obstacle.a_transpose_times(&self.lambda).norm()
    }

    /// Moves the block at least `margin` inside `lambda, mu >= 0` and
    /// `||A^T lambda|| <= 1` without disturbing the balance equality. The edge
    /// lengths span the null space of `A^T` and the uniform vector that of
    /// `G^T`, so both shifts leave `G^T mu + R^T A^T lambda` unchanged; `d`
    /// is recomputed from the scalar equality.
    pub fn interior(
        &self,
        obstacle: &ConvexObstacle,
        footprint: &VehicleFootprint,
        state: &VehicleState,
        margin: f64,
    ) -> Self {
        let nv = obstacle.vertices.len();
        let edges: Vec<f64> = (0..nv)
            .map(|i| obstacle.vertices[i].distance(obstacle.vertices[(i + 1) % nv]))
            .collect();
        let shortest = edges.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut block = self.clone();
        let shift = self.lambda.iter().chain(&self.mu).cloned().fold(f64::INFINITY, f64::min);
        if shift < margin && shortest > 0.0 {
            let need = margin - shift;
            for (l, e) in block.lambda.iter_mut().zip(&edges) {
                *l += need * e / shortest;
            }
            for m in block.mu.iter_mut() {
                *m += need;
            }
        }
        let r = block.norm(obstacle);
        if r > 1.0 - margin {
            block = block.scaled((1.0 - margin) / r);
        }
        block.d = -certificate_value(footprint, state, obstacle, &block.lambda, &block.mu);
        block
    }
}

/// Blocks stored step-major: index `(k - 1) * M + m` for steps `k = 1..=K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualWarmStart {
    pub num_obstacles: usize,
    pub steps: usize,
    pub blocks: Vec<DualBlock>,
    /// Blocks whose QP had no solution (the warm state touches the
    /// obstacle); they hold the constant initialization instead.
    pub fallback_blocks: usize,
    #[serde(skip)]
    pub reports: Vec<QpReport>,
}

impl DualWarmStart {
    /// `k` counts from 1.
    pub fn block(&self, m: usize, k: usize) -> &DualBlock {
        &self.blocks[(k - 1) * self.num_obstacles + m]
    }

    /// Constant multipliers for every block.
    pub fn constant(
        value: f64,
        states: &[VehicleState],
        obstacles: &[ConvexObstacle],
        footprint: &VehicleFootprint,
    ) -> Self {
        let blocks = states
            .iter()
            .flat_map(|s| obstacles.iter().map(move |o| DualBlock::constant(value, o, footprint, s)))
            .collect();
        Self {
            num_obstacles: obstacles.len(),
            steps: states.len(),
            blocks,
            fallback_blocks: 0,
            reports: Vec::new(),
        }
    }
}

/// The separable relaxed QP: one block per (obstacle, state).
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedDualQp {
    pub num_obstacles: usize,
    pub steps: usize,
    pub beta: f64,
    pub blocks: Vec<QuadraticProgram>,
    states: Vec<VehicleState>,
    obstacles: Vec<ConvexObstacle>,
    footprint: VehicleFootprint,
}

impl RelaxedDualQp {
    /// All blocks stacked into one block-diagonal program.
    pub fn assemble(&self) -> QuadraticProgram {
        let n: usize = self.blocks.iter().map(|b| b.n).sum();
        let mut out = QuadraticProgram::new(n);
        let mut offset = 0;
        for b in &self.blocks {
            for &(r, c, v) in &b.p.entries {
                out.add_hessian(offset + r, offset + c, v);
            }
            out.q[offset..offset + b.n].copy_from_slice(&b.q);
            let rows = |m: &crate::qp_solver::SparseMatrix, r: usize| -> Vec<(usize, f64)> {
                m.entries
                    .iter()
                    .filter(|e| e.0 == r)
                    .map(|e| (offset + e.1, e.2))
                    .collect()
            };
            for r in 0..b.a_eq.rows {
                out.add_equality(&rows(&b.a_eq, r), b.b_eq[r]);
            }
            for r in 0..b.a_in.rows {
                out.add_inequality(&rows(&b.a_in, r), b.lower[r], b.upper[r]);
            }
            offset += b.n;
        }
        out
    }
}

fn block_qp(
    state: &VehicleState,
    obstacle: &ConvexObstacle,
    footprint: &VehicleFootprint,
    beta: f64,
) -> QuadraticProgram {
    let nm = obstacle.num_halfspaces();
    let (mu0, d) = (nm, nm + 4);
    let mut qp = QuadraticProgram::new(nm + 5);
    // (1/beta) ||A^T lambda||^2 = lambda^T (A A^T / beta) lambda
    for i in 0..nm {
        for j in i..nm {
            let v = 2.0 / beta * obstacle.normal(i).dot(&obstacle.normal(j));
            if v != 0.0 {
                qp.add_hessian(i, j, v);
            }
        }
    }
    qp.q[d] = 1.0;
    let t = nalgebra::Vector2::new(state.x, state.y);
    let res = obstacle.offset_residuals(t);
    let mut scalar: Vec<(usize, f64)> = res.iter().enumerate().map(|(i, r)| (i, *r)).collect();
    scalar.extend((0..4).map(|j| (mu0 + j, -footprint.body_offsets[j])));
    scalar.push((d, 1.0));
    qp.add_equality(&scalar, 0.0);
    // G^T mu + R^T A^T lambda = 0, R^T n = (c nx + s ny, -s nx + c ny)
    let (s, c) = state.phi.sin_cos();
    for axis in 0..2 {
        let mut row = Vec::with_capacity(nm + 4);
        for i in 0..nm {
            let n = obstacle.normals[i];
            let rn = if axis == 0 { c * n[0] + s * n[1] } else { -s * n[0] + c * n[1] };
            row.push((i, rn));
        }
        for j in 0..4 {
            row.push((mu0 + j, footprint.body_normals[j][axis]));
        }
        qp.add_equality(&row, 0.0);
    }
    for i in 0..nm + 4 {
        qp.add_bound(i, 0.0, f64::INFINITY);
    }
    qp.add_bound(d, f64::NEG_INFINITY, -EPS_D);
    qp
}

pub fn build_relaxed_dual_qp(
    warm_states: &[VehicleState],
    obstacles: &[ConvexObstacle],
    footprint: &VehicleFootprint,
    beta: f64,
) -> Result<RelaxedDualQp, DualError> {
    if obstacles.is_empty() {
        return Err(DualError::EmptyObstacleSet);
    }
    if warm_states.is_empty() {
        return Err(DualError::EmptyTrajectory);
    }
    assert!(beta > 0.0, "beta must be positive");
    let blocks = warm_states
        .iter()
        .flat_map(|s| obstacles.iter().map(move |o| block_qp(s, o, footprint, beta)))
        .collect();
    Ok(RelaxedDualQp {
        num_obstacles: obstacles.len(),
        steps: warm_states.len(),
        beta,
        blocks,
        states: warm_states.to_vec(),
        obstacles: obstacles.to_vec(),
        footprint: footprint.clone(),
    })
}

/// Solves all blocks in parallel; assembly order is the block order.
pub fn solve_dual_warm_start(qp: &RelaxedDualQp) -> Result<DualWarmStart, DualError> {
    let m = qp.num_obstacles;
    let solved: Vec<Result<(DualBlock, QpReport, bool), QpError>> = qp
        .blocks
        .par_iter()
        .enumerate()
        .map(|(idx, block)| {
            let sol = solve_qp(block, 1e-9, 20_000)?;
            let nm = block.n - 5;
            if sol.report.status == QpStatus::Optimal {
                let (k, o) = (idx / m, idx % m);
                let lambda: Vec<f64> = sol.x[..nm].iter().map(|v| v.max(0.0)).collect();
                let db = exact_block(lambda, &qp.obstacles[o], &qp.footprint, &qp.states[k]);
                Ok((db, sol.report, false))
            } else {
                let (k, o) = (idx / m, idx % m);
                let db = DualBlock::constant(0.1, &qp.obstacles[o], &qp.footprint, &qp.states[k]);
                Ok((db, sol.report, true))
            }
        })
        .collect();
    let mut blocks = Vec::with_capacity(solved.len());
    let mut reports = Vec::with_capacity(solved.len());
    let mut fallback_blocks = 0;
    for r in solved {
        let (b, rep, fell_back) = r?;
        fallback_blocks += usize::from(fell_back);
        blocks.push(b);
        reports.push(rep);
    }
    Ok(DualWarmStart {
        num_obstacles: m,
        steps: qp.steps,
        blocks,
        fallback_blocks,
        reports,
    })
}

/// Completes `lambda` to a block satisfying both equalities to rounding:
/// `mu` is read off the balance (the body normals are axis aligned, so each
/// pair of opposite normals takes the positive and negative part) and `d`
/// off the scalar equality.
pub fn exact_block(
    lambda: Vec<f64>,
    obstacle: &ConvexObstacle,
    footprint: &VehicleFootprint,
    state: &VehicleState,
) -> DualBlock {
    let pose = crate::geometry::pose_transform(state);
    let w = -(pose.rotation.transpose() * obstacle.a_transpose_times(&lambda));
    let mu = footprint
        .body_normals
        .map(|n| (n[0] * w[0] + n[1] * w[1]).max(0.0));
    let d = -certificate_value(footprint, state, obstacle, &lambda, &mu);
    DualBlock { lambda, mu, d }
}

/// Divides `(lambda, mu, d)` by `||A^T lambda||` wherever that exceeds one.
pub fn scale_to_feasible(dual: &DualWarmStart, obstacles: &[ConvexObstacle]) -> DualWarmStart {
    let m = dual.num_obstacles;
    let blocks = dual
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let r = b.norm(&obstacles[i % m]);
            if r > 1.0 {
                b.scaled(1.0 / r)
            } else {
                b.clone()
            }
        })
        .collect();
    DualWarmStart {
        blocks,
        ..dual.clone()
    }
}

/// Rescales a block to `||A^T lambda|| = 1`, where its certificate value is
/// as large as the direction allows.
pub fn normalize_certificate(block: &DualBlock, obstacle: &ConvexObstacle) -> DualBlock {
    let r = block.norm(obstacle);
    if r > 0.0 {
        block.scaled(1.0 / r)
    } else {
        block.clone()
    }
}

/// Residuals of one block against the exact dual constraints:
/// `(scalar equality, ||balance||, ||A^T lambda||)`.
pub fn block_residuals(
    block: &DualBlock,
    state: &VehicleState,
    obstacle: &ConvexObstacle,
    footprint: &VehicleFootprint,
) -> (f64, f64, f64) {
    let scalar = certificate_value(footprint, state, obstacle, &block.lambda, &block.mu) + block.d;
    let balance = certificate_balance(footprint, state, obstacle, &block.lambda, &block.mu).norm();
    (scalar, balance, block.norm(obstacle))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropositionReport {
    pub beta: f64,
    /// Pairs used (disjoint warm state and obstacle).
    pub pairs: usize,
    /// Overlapping pairs left out.
    pub skipped: usize,
    /// Largest scalar/balance equality residual of the scaled solution.
    pub equality_residual: f64,
    pub max_norm: f64,
    pub min_sign: f64,
    /// Optimal value of the exact problem, `-sum of distances`.
    pub exact_sum: f64,
    /// `sum d` of the scaled relaxed solution.
    pub relaxed_sum: f64,
    /// `(1/beta) sum ||A^T lambda||^2` at the scaled relaxed solution.
    pub relaxed_penalty: f64,
    /// `(1/beta) sum ||A^T lambda~||^2` at the exact optimum (one per pair).
    pub exact_penalty: f64,
}

impl PropositionReport {
    pub fn gap(&self) -> f64 {
        self.relaxed_sum - self.exact_sum
    }
}

/// Solves the relaxed problem on disjoint pairs, scales it, and checks
/// feasibility for the exact problem together with
/// `sum d~ <= sum d <= (1/beta) sum ||A^T lambda||^2 + sum d` and
/// `gap <= (1/beta) sum ||A^T lambda~||^2`.
pub fn check_propositions(
    states: &[VehicleState],
    obstacles: &[ConvexObstacle],
    footprint: &VehicleFootprint,
    beta: f64,
    tol: f64,
) -> Result<PropositionReport, DualError> {
    let mut kept_states = Vec::new();
    let mut kept_obstacles = Vec::new();
    let mut distances = Vec::new();
    let mut skipped = 0;
    for s in states {
        let body = footprint.at(s);
        for o in obstacles {
            let dist = polygon_distance(&body, o);
            if dist > 0.0 {
                kept_states.push(*s);
                kept_obstacles.push(o.clone());
                distances.push(dist);
            } else {
                skipped += 1;
            }
        }
    }
    let mut report = PropositionReport {
        beta,
        pairs: distances.len(),
        skipped,
        equality_residual: 0.0,
        max_norm: 0.0,
        min_sign: 0.0,
        exact_sum: -distances.iter().sum::<f64>(),
        relaxed_sum: 0.0,
        relaxed_penalty: 0.0,
        exact_penalty: distances.len() as f64 / beta,
    };
    for (i, (s, o)) in kept_states.iter().zip(&kept_obstacles).enumerate() {
        let qp = build_relaxed_dual_qp(std::slice::from_ref(s), std::slice::from_ref(o), footprint, beta)?;
        let raw = solve_dual_warm_start(&qp)?;
        if raw.fallback_blocks > 0 {
            return Err(DualError::PropositionViolated(format!("pair {i}: relaxed QP not solved")));
        }
        let scaled = scale_to_feasible(&raw, std::slice::from_ref(o));
        let b = &scaled.blocks[0];
        let (scalar, balance, norm) = block_residuals(b, s, o, footprint);
        report.equality_residual = report.equality_residual.max(scalar.abs()).max(balance);
        report.max_norm = report.max_norm.max(norm);
        let min_sign = b.lambda.iter().chain(&b.mu).fold(f64::INFINITY, |m, v| m.min(*v));
        report.min_sign = if i == 0 { min_sign } else { report.min_sign.min(min_sign) };
        report.relaxed_sum += b.d;
        report.relaxed_penalty += norm * norm / beta;
    }
    let violations = [
        (report.exact_sum <= report.relaxed_sum + tol, "sum d~ <= sum d"),
        (
            report.relaxed_sum <= report.relaxed_penalty + report.relaxed_sum + tol,
            "sum d <= penalty + sum d",
        ),
        (report.gap() <= report.exact_penalty + tol, "gap <= (1/beta) sum ||A^T lambda~||^2"),
        (report.max_norm <= 1.0 + 1e-9, "||A^T lambda|| <= 1"),
    ];
    if let Some((_, what)) = violations.iter().find(|(ok, _)| !ok) {
        return Err(DualError::PropositionViolated(format!("{what}: {report:?}")));
    }
    Ok(report)
}
