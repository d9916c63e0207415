//! Convex quadratic programs
//!
//! ```text
//!     minimize    1/2 x^T P x + q^T x
//!     subject to  A_eq x  = b_eq
//!                 lower <= A_in x <= upper
//! ```
//!
//! solved by operator splitting (ADMM on the `l <= A x <= u` splitting) with
//! Ruiz equilibration, followed by an active-set polish step that recovers a
//! high-accuracy primal/dual pair once the active set has settled. Primal
//! infeasibility is certified from the dual iterate differences.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sparse::{constraints_after_variables, symmetric_mul, SparseLdl};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.rows && col < self.cols);
        self.entries.push((row, col, value));
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows];
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
        }
        y
    }

    pub fn mul_transpose(&self, y: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.cols];
        for &(r, c, v) in &self.entries {
            x[c] += v * y[r];
        }
        x
    }
}

/// `P` stores each symmetric pair once with `row <= col`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub n: usize,
    pub p: SparseMatrix,
    pub q: Vec<f64>,
    pub a_eq: SparseMatrix,
    pub b_eq: Vec<f64>,
    pub a_in: SparseMatrix,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl QuadraticProgram {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            p: SparseMatrix::new(n, n),
            q: vec![0.0; n],
            a_eq: SparseMatrix::new(0, n),
            b_eq: Vec::new(),
            a_in: SparseMatrix::new(0, n),
            lower: Vec::new(),
            upper: Vec::new(),
        }
    }

    /// Adds `value` to `P[i][j]` and `P[j][i]`.
    pub fn add_hessian(&mut self, i: usize, j: usize, value: f64) {
        let (r, c) = if i <= j { (i, j) } else { (j, i) };
        self.p.push(r, c, value);
    }

    pub fn add_equality(&mut self, coeffs: &[(usize, f64)], rhs: f64) {
        let row = self.a_eq.rows;
        self.a_eq.rows += 1;
        for &(c, v) in coeffs {
            self.a_eq.push(row, c, v);
        }
        self.b_eq.push(rhs);
    }

    pub fn add_inequality(&mut self, coeffs: &[(usize, f64)], lower: f64, upper: f64) {
        let row = self.a_in.rows;
        self.a_in.rows += 1;
        for &(c, v) in coeffs {
            self.a_in.push(row, c, v);
        }
        self.lower.push(lower);
        self.upper.push(upper);
    }

    pub fn add_bound(&mut self, var: usize, lower: f64, upper: f64) {
        self.add_inequality(&[(var, 1.0)], lower, upper);
    }

    pub fn num_constraints(&self) -> usize {
        self.a_eq.rows + self.a_in.rows
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let (entries, values) = self.hessian_triplets();
        let mut px = vec![0.0; self.n];
        symmetric_mul(&entries, &values, x, &mut px);
        0.5 * dot(x, &px) + dot(&self.q, x)
    }

    fn hessian_triplets(&self) -> (Vec<(usize, usize)>, Vec<f64>) {
        self.p.entries.iter().map(|&(r, c, v)| ((r, c), v)).unzip()
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.n;
        let dims_ok = self.p.rows == n
            && self.p.cols == n
            && self.q.len() == n
            && self.a_eq.cols == n
            && self.b_eq.len() == self.a_eq.rows
            && self.a_in.cols == n
            && self.lower.len() == self.a_in.rows
            && self.upper.len() == self.a_in.rows;
        if !dims_ok {
            return Err(QpError::DimensionMismatch);
        }
        let in_range = |m: &SparseMatrix| m.entries.iter().all(|&(r, c, _)| r < m.rows && c < m.cols);
        if !(in_range(&self.p) && in_range(&self.a_eq) && in_range(&self.a_in)) {
            return Err(QpError::DimensionMismatch);
        }
        if self.p.entries.iter().any(|&(r, c, _)| r > c) {
            return Err(QpError::NotUpperTriangular);
        }
        let finite = self.q.iter().chain(&self.b_eq).all(|v| v.is_finite())
            && [&self.p, &self.a_eq, &self.a_in]
                .iter()
                .all(|m| m.entries.iter().all(|e| e.2.is_finite()));
        if !finite || self.lower.iter().chain(&self.upper).any(|v| v.is_nan()) {
            return Err(QpError::NonFinite);
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| l > u) {
            return Err(QpError::InvertedBounds);
        }
        // PSD test: P + eps I must factor with n positive pivots.
        let (mut entries, mut values) = self.hessian_triplets();
        let scale = values.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            entries.push((i, i));
            values.push(1e-9 * scale);
        }
        let order: Vec<usize> = (0..n).collect();
        let mut ldl = SparseLdl::new(n, &entries, &order);
        match ldl.factor(&values) {
            Ok(()) if ldl.positive_pivots() == n => Ok(()),
            _ => Err(QpError::NotPositiveSemidefinite),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("inconsistent problem dimensions")]
    DimensionMismatch,
    #[error("P must be given by its upper triangle")]
    NotUpperTriangular,
    #[error("P is not positive semidefinite")]
    NotPositiveSemidefinite,
    #[error("non-finite problem data")]
    NonFinite,
    #[error("lower bound exceeds upper bound")]
    InvertedBounds,
    #[error("KKT factorization failed")]
    Factorization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpReport {
    pub status: QpStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
    pub polished: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Multipliers of the equality rows followed by the inequality rows.
    /// Negative at an active lower bound, positive at an active upper bound.
    pub y: Vec<f64>,
    pub report: QpReport,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    pub relaxation: f64,
    pub infeasibility_tol: f64,
    pub check_every: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 20_000,
            rho: 0.1,
            sigma: 1e-6,
            relaxation: 1.6,
            infeasibility_tol: 1e-6,
            check_every: 10,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Stacked `l <= A x <= u` form shared by the ADMM loop and the polish step.
struct Stacked {
    n: usize,
    m: usize,
    p_entries: Vec<(usize, usize)>,
    p_values: Vec<f64>,
    a: SparseMatrix,
    q: Vec<f64>,
    l: Vec<f64>,
    u: Vec<f64>,
}

impl Stacked {
    fn from_qp(qp: &QuadraticProgram) -> Self {
        let n = qp.n;
        let m = qp.num_constraints();
        let mut a = SparseMatrix::new(m, n);
        a.entries.extend(qp.a_eq.entries.iter().copied());
        a.entries
            .extend(qp.a_in.entries.iter().map(|&(r, c, v)| (r + qp.a_eq.rows, c, v)));
        let mut l = qp.b_eq.clone();
        l.extend(&qp.lower);
        let mut u = qp.b_eq.clone();
        u.extend(&qp.upper);
        let (p_entries, p_values) = qp.hessian_triplets();
        Self {
            n,
            m,
            p_entries,
            p_values,
            a,
            q: qp.q.clone(),
            l,
            u,
        }
    }

    fn p_mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        symmetric_mul(&self.p_entries, &self.p_values, x, &mut y);
        y
    }

    fn project(&self, z: &mut [f64]) {
        for ((zi, l), u) in z.iter_mut().zip(&self.l).zip(&self.u) {
            *zi = zi.clamp(*l, *u);
        }
    }

    /// (primal residual, dual residual) of an unscaled pair.
    fn residuals(&self, x: &[f64], y: &[f64]) -> (f64, f64) {
        let ax = self.a.mul(x);
        let prim = ax
            .iter()
            .zip(self.l.iter().zip(&self.u))
            .map(|(v, (l, u))| (l - v).max(v - u).max(0.0))
            .fold(0.0, f64::max);
        let mut grad = self.p_mul(x);
        let aty = self.a.mul_transpose(y);
        for i in 0..self.n {
            grad[i] += self.q[i] + aty[i];
        }
        (prim, inf_norm(&grad))
    }

    /// Complementarity violation: multipliers on rows that are not at the
    /// matching bound.
    fn complementarity(&self, x: &[f64], y: &[f64]) -> f64 {
        let ax = self.a.mul(x);
        (0..self.m)
            .map(|i| {
                if y[i] > 0.0 {
                    y[i] * (self.u[i] - ax[i]).abs().min(1e300)
                } else if y[i] < 0.0 {
                    -y[i] * (ax[i] - self.l[i]).abs().min(1e300)
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Diagonal Ruiz equilibration of `[P A^T; A 0]` plus a cost scale.
struct Scaling {
    d: Vec<f64>,
    e: Vec<f64>,
    c: f64,
}

impl Scaling {
    fn compute(s: &Stacked, passes: usize) -> Self {
        let (n, m) = (s.n, s.m);
        let mut d = vec![1.0; n];
        let mut e = vec![1.0; m];
        let mut c = 1.0;
        for _ in 0..passes {
            let mut col_d = vec![0.0_f64; n];
            let mut col_e = vec![0.0_f64; m];
            for (&(i, j), &v) in s.p_entries.iter().zip(&s.p_values) {
                let w = (c * d[i] * d[j] * v).abs();
                col_d[i] = col_d[i].max(w);
                col_d[j] = col_d[j].max(w);
            }
            for &(r, col, v) in &s.a.entries {
                let w = (e[r] * d[col] * v).abs();
                col_d[col] = col_d[col].max(w);
                col_e[r] = col_e[r].max(w);
            }
            for i in 0..n {
                if col_d[i] > 1e-8 {
                    d[i] /= col_d[i].sqrt().clamp(1e-4, 1e4);
                }
            }
            for r in 0..m {
                if col_e[r] > 1e-8 {
                    e[r] /= col_e[r].sqrt().clamp(1e-4, 1e4);
                }
            }
            // cost scaling from the mean column norm of P and |q|
            let mut col_p = vec![0.0_f64; n];
            for (&(i, j), &v) in s.p_entries.iter().zip(&s.p_values) {
                let w = (c * d[i] * d[j] * v).abs();
                col_p[i] = col_p[i].max(w);
                col_p[j] = col_p[j].max(w);
            }
            let mean_p = if n > 0 { col_p.iter().sum::<f64>() / n as f64 } else { 0.0 };
            let q_norm = s
                .q
                .iter()
                .zip(&d)
                .map(|(q, di)| (c * q * di).abs())
                .fold(0.0, f64::max);
            let gamma = mean_p.max(q_norm);
            if gamma > 1e-8 {
                c /= gamma.clamp(1e-4, 1e4);
            }
        }
        Self { d, e, c }
    }

    fn apply(&self, s: &Stacked) -> Stacked {
        let mut out = Stacked {
            n: s.n,
            m: s.m,
            p_entries: s.p_entries.clone(),
            p_values: s
                .p_entries
                .iter()
                .zip(&s.p_values)
                .map(|(&(i, j), v)| self.c * self.d[i] * self.d[j] * v)
                .collect(),
            a: SparseMatrix::new(s.m, s.n),
            q: s.q.iter().zip(&self.d).map(|(q, d)| self.c * q * d).collect(),
            l: s.l.iter().zip(&self.e).map(|(l, e)| l * e).collect(),
            u: s.u.iter().zip(&self.e).map(|(u, e)| u * e).collect(),
        };
        out.a.entries = s
            .a
            .entries
            .iter()
            .map(|&(r, c, v)| (r, c, self.e[r] * self.d[c] * v))
            .collect();
        out
    }
}

struct AdmmKkt {
    ldl: SparseLdl,
    base_values: Vec<f64>,
    rho_slots: Vec<usize>,
}

impl AdmmKkt {
    fn new(s: &Stacked, sigma: f64) -> Self {
        let (n, m) = (s.n, s.m);
        let mut entries = s.p_entries.clone();
        let mut base_values = s.p_values.clone();
        for i in 0..n {
            entries.push((i, i));
            base_values.push(sigma);
        }
        let jac: Vec<(usize, usize)> = s.a.entries.iter().map(|&(r, c, _)| (r, c)).collect();
        for &(r, c, v) in &s.a.entries {
            entries.push((n + r, c));
            base_values.push(v);
        }
        let mut rho_slots = Vec::with_capacity(m);
        for r in 0..m {
            rho_slots.push(entries.len());
            entries.push((n + r, n + r));
            base_values.push(0.0);
        }
        let order = constraints_after_variables(n, m, &jac);
        let ldl = SparseLdl::new(n + m, &entries, &order);
        Self {
            ldl,
            base_values,
            rho_slots,
        }
    }

    fn factor(&mut self, rho: &[f64]) -> Result<(), QpError> {
        let mut values = self.base_values.clone();
        for (slot, r) in self.rho_slots.iter().zip(rho) {
            values[*slot] = -1.0 / r;
        }
        self.ldl.factor(&values).map_err(|_| QpError::Factorization)
    }
}

fn rho_vector(s: &Stacked, rho: f64) -> Vec<f64> {
    (0..s.m)
        .map(|i| {
            if s.l[i] == s.u[i] {
                1e3 * rho
            } else if s.l[i].is_infinite() && s.u[i].is_infinite() {
                1e-6
            } else {
                rho
            }
        })
        .collect()
}

pub fn solve_qp(qp: &QuadraticProgram, tol: f64, max_iter: usize) -> Result<QpSolution, QpError> {
    solve_qp_with_settings(
        qp,
        &QpSettings {
            tol,
            max_iter,
            ..QpSettings::default()
        },
    )
}

/// Interior-point first; if it does not converge the operator-splitting
/// iteration takes over, which also certifies infeasibility.
pub fn solve_qp_with_settings(
    qp: &QuadraticProgram,
    settings: &QpSettings,
) -> Result<QpSolution, QpError> {
    qp.validate()?;
    let original = Stacked::from_qp(qp);
    if let Some((x, y, iterations)) = interior_point(&original, settings.tol, 100) {
        let polished = polish(&original, &x, &y, settings.tol);
        let (prim, dual) = original.residuals(&x, &y);
        let accepted = match polished {
            Some((xp, yp)) => Some((xp, yp, true)),
            None if prim <= settings.tol
                && dual <= settings.tol
                && original.complementarity(&x, &y) <= settings.tol =>
            {
                Some((x, y, false))
            }
            None => None,
        };
        if let Some((x, y, polished)) = accepted {
            let (prim, dual) = original.residuals(&x, &y);
            let objective = qp.objective(&x);
            return Ok(QpSolution {
                x,
                y,
                report: QpReport {
                    status: QpStatus::Optimal,
                    iterations,
                    primal_residual: prim,
                    dual_residual: dual,
                    objective,
                    polished,
                },
            });
        }
    }
    admm(qp, &original, settings)
}

fn admm(qp: &QuadraticProgram, original: &Stacked, settings: &QpSettings) -> Result<QpSolution, QpError> {
    let (n, m) = (original.n, original.m);
    let scaling = Scaling::compute(original, 10);
    let s = scaling.apply(original);

    let unscale_x = |xs: &[f64]| -> Vec<f64> { xs.iter().zip(&scaling.d).map(|(x, d)| x * d).collect() };
    let unscale_y =
        |ys: &[f64]| -> Vec<f64> { ys.iter().zip(&scaling.e).map(|(y, e)| y * e / scaling.c).collect() };

    let mut rho_scalar = settings.rho;
    let mut rho = rho_vector(&s, rho_scalar);
    let mut kkt = AdmmKkt::new(&s, settings.sigma);
    kkt.factor(&rho)?;

    let mut x = vec![0.0; n];
    let mut z = vec![0.0; m];
    s.project(&mut z);
    let mut y = vec![0.0; m];
    let mut rhs = vec![0.0; n + m];
    let mut best_polish_scale = f64::INFINITY;
    let alpha = settings.relaxation;

    let finish = |x_out: Vec<f64>, y_out: Vec<f64>, status: QpStatus, it: usize, polished: bool| {
        let (prim, dual) = original.residuals(&x_out, &y_out);
        let objective = qp.objective(&x_out);
        QpSolution {
            x: x_out,
            y: y_out,
            report: QpReport {
                status,
                iterations: it,
                primal_residual: prim,
                dual_residual: dual,
                objective,
                polished,
            },
        }
    };

    if m == 0 {
        // Unconstrained: one regularized Newton solve with refinement.
        if let Some((xp, yp)) = polish(original, &x, &y, settings.tol) {
            return Ok(finish(xp, yp, QpStatus::Optimal, 0, true));
        }
    }

    for it in 1..=settings.max_iter {
        let y_prev = y.clone();
        for i in 0..n {
            rhs[i] = settings.sigma * x[i] - s.q[i];
        }
        for i in 0..m {
            rhs[n + i] = z[i] - y[i] / rho[i];
        }
        kkt.ldl.solve(&mut rhs);
        let mut z_next = vec![0.0; m];
        for i in 0..m {
            let nu = rhs[n + i];
            let z_tilde = z[i] + (nu - y[i]) / rho[i];
            let z_relaxed = alpha * z_tilde + (1.0 - alpha) * z[i];
            z_next[i] = z_relaxed + y[i] / rho[i];
        }
        s.project(&mut z_next);
        for i in 0..m {
            let nu = rhs[n + i];
            let z_tilde = z[i] + (nu - y[i]) / rho[i];
            let z_relaxed = alpha * z_tilde + (1.0 - alpha) * z[i];
            y[i] += rho[i] * (z_relaxed - z_next[i]);
        }
        for i in 0..n {
            x[i] = alpha * rhs[i] + (1.0 - alpha) * x[i];
        }
        z = z_next;

        if it % settings.check_every != 0 && it != settings.max_iter {
            continue;
        }

        let xu = unscale_x(&x);
        let yu = unscale_y(&y);
        let (prim, dual) = original.residuals(&xu, &yu);
        let compl = original.complementarity(&xu, &yu);
        if prim <= settings.tol && dual <= settings.tol && compl <= settings.tol {
            return Ok(finish(xu, yu, QpStatus::Optimal, it, false));
        }

        let scale = prim.max(dual);
        if scale < 1e-3 && scale < 0.2 * best_polish_scale {
            best_polish_scale = scale;
            if let Some((xp, yp)) = polish(original, &xu, &yu, settings.tol) {
                return Ok(finish(xp, yp, QpStatus::Optimal, it, true));
            }
        }

        // Primal infeasibility certificate in the scaled space.
        let dy: Vec<f64> = y.iter().zip(&y_prev).map(|(a, b)| a - b).collect();
        let dy_norm = inf_norm(&dy);
        if dy_norm > 1e-12 {
            let eps = settings.infeasibility_tol * dy_norm;
            let atdy = s.a.mul_transpose(&dy);
            let mut support = 0.0;
            let mut certified = inf_norm(&atdy) <= eps;
            for i in 0..m {
                if dy[i] > 0.0 {
                    if s.u[i].is_infinite() {
                        certified &= dy[i] <= eps;
                    } else {
                        support += s.u[i] * dy[i];
                    }
                } else if dy[i] < 0.0 {
                    if s.l[i].is_infinite() {
                        certified &= -dy[i] <= eps;
                    } else {
                        support += s.l[i] * dy[i];
                    }
                }
            }
            if certified && support < -eps {
                return Ok(finish(xu, yu, QpStatus::Infeasible, it, false));
            }
        }

        // Residual balancing in the scaled space.
        if it % (5 * settings.check_every) == 0 {
            let ax = s.a.mul(&x);
            let px = s.p_mul(&x);
            let aty = s.a.mul_transpose(&y);
            let prim_s = ax.iter().zip(&z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let dual_s = (0..n)
                .map(|i| (px[i] + s.q[i] + aty[i]).abs())
                .fold(0.0, f64::max);
            let prim_n = prim_s / inf_norm(&ax).max(inf_norm(&z)).max(1e-10);
            let dual_n =
                dual_s / inf_norm(&px).max(inf_norm(&aty)).max(inf_norm(&s.q)).max(1e-10);
            let proposal = (rho_scalar * (prim_n / dual_n.max(1e-14)).sqrt()).clamp(1e-6, 1e6);
            if proposal > 5.0 * rho_scalar || proposal < 0.2 * rho_scalar {
                rho_scalar = proposal;
                rho = rho_vector(&s, rho_scalar);
                kkt.factor(&rho)?;
            }
        }
    }
    let xu = unscale_x(&x);
    let yu = unscale_y(&y);
    if let Some((xp, yp)) = polish(original, &xu, &yu, settings.tol) {
        return Ok(finish(xp, yp, QpStatus::Optimal, settings.max_iter, true));
    }
    Ok(finish(xu, yu, QpStatus::MaxIterations, settings.max_iter, false))
}

/// Mehrotra predictor-corrector on `E x = b`, `G x + s = h`, `s >= 0`, where
/// every finite side of a two-sided row becomes one row of `G`. Returns the
/// primal point and stacked multipliers once all residuals are well below
/// `tol`.
fn interior_point(st: &Stacked, tol: f64, max_iter: usize) -> Option<(Vec<f64>, Vec<f64>, usize)> {
    let (n, m) = (st.n, st.m);
    let mut row_entries: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
    for &(r, c, v) in &st.a.entries {
        row_entries[r].push((c, v));
    }
    let mut eq_rows = Vec::new();
    let mut b = Vec::new();
    let mut g_rows: Vec<(usize, f64)> = Vec::new();
    let mut h = Vec::new();
    for i in 0..m {
        if st.l[i] == st.u[i] {
            eq_rows.push(i);
            b.push(st.l[i]);
        } else {
            if st.u[i].is_finite() {
                g_rows.push((i, 1.0));
                h.push(st.u[i]);
            }
            if st.l[i].is_finite() {
                g_rows.push((i, -1.0));
                h.push(-st.l[i]);
            }
        }
    }
    let (me, mi) = (eq_rows.len(), g_rows.len());
    let dim = n + me + mi;

    let mut entries = st.p_entries.clone();
    let mut values = st.p_values.clone();
    let x_diag = entries.len();
    for i in 0..n {
        entries.push((i, i));
        values.push(0.0);
    }
    let mut jac = Vec::new();
    for (j, &r) in eq_rows.iter().enumerate() {
        for &(c, v) in &row_entries[r] {
            entries.push((n + j, c));
            values.push(v);
            jac.push((j, c));
        }
    }
    for (j, &(r, sign)) in g_rows.iter().enumerate() {
        for &(c, v) in &row_entries[r] {
            entries.push((n + me + j, c));
            values.push(sign * v);
            jac.push((me + j, c));
        }
    }
    let row_diag = entries.len();
    for j in 0..me + mi {
        entries.push((n + j, n + j));
        values.push(0.0);
    }
    let order = constraints_after_variables(n, me + mi, &jac);
    let mut ldl = SparseLdl::new(dim, &entries, &order);

    let e_mul = |x: &[f64]| -> Vec<f64> {
        eq_rows
            .iter()
            .map(|&r| row_entries[r].iter().map(|&(c, v)| v * x[c]).sum())
            .collect()
    };
    let g_mul = |x: &[f64]| -> Vec<f64> {
        g_rows
            .iter()
            .map(|&(r, sign)| sign * row_entries[r].iter().map(|&(c, v)| v * x[c]).sum::<f64>())
            .collect()
    };
    let transpose_mul = |y: &[f64], z: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (j, &r) in eq_rows.iter().enumerate() {
            for &(c, v) in &row_entries[r] {
                out[c] += v * y[j];
            }
        }
        for (j, &(r, sign)) in g_rows.iter().enumerate() {
            for &(c, v) in &row_entries[r] {
                out[c] += sign * v * z[j];
            }
        }
        out
    };

    let reg = 1e-9;
    // Factor with the regularized matrix, refine against the exact one.
    let mut factor_and_solve =
        |w: &[f64], rhs_list: &mut [&mut Vec<f64>]| -> Option<()> {
            let mut exact = values.clone();
            for j in 0..mi {
                exact[row_diag + me + j] = -w[j];
            }
            let mut regd = exact.clone();
            for i in 0..n {
                regd[x_diag + i] = reg;
            }
            for j in 0..me {
                regd[row_diag + j] = -reg;
            }
            ldl.factor(&regd).ok()?;
            let mut resid = vec![0.0; dim];
            for rhs in rhs_list.iter_mut() {
                let target = rhs.clone();
                ldl.solve(rhs);
                for _ in 0..3 {
                    symmetric_mul(&entries, &exact, rhs, &mut resid);
                    let mut corr: Vec<f64> = target.iter().zip(&resid).map(|(t, r)| t - r).collect();
                    ldl.solve(&mut corr);
                    rhs.iter_mut().zip(&corr).for_each(|(a, c)| *a += c);
                }
                if rhs.iter().any(|v| !v.is_finite()) {
                    return None;
                }
            }
            Some(())
        };

    // Initial point from the regularized least-squares system.
    let mut init = vec![0.0; dim];
    for i in 0..n {
        init[i] = -st.q[i];
    }
    init[n..n + me].copy_from_slice(&b);
    init[n + me..].copy_from_slice(&h);
    factor_and_solve(&vec![1.0; mi], &mut [&mut init])?;
    let mut x = init[..n].to_vec();
    let mut y = init[n..n + me].to_vec();
    let gx = g_mul(&x);
    let mut s: Vec<f64> = h.iter().zip(&gx).map(|(h, g)| h - g).collect();
    let mut z: Vec<f64> = init[n + me..].to_vec();
    let min_s = s.iter().copied().fold(f64::INFINITY, f64::min);
    if min_s <= 1e-2 {
        let shift = 1.0 - min_s.min(0.0);
        s.iter_mut().for_each(|v| *v += shift);
    }
    let min_z = z.iter().copied().fold(f64::INFINITY, f64::min);
    if min_z <= 1e-2 {
        let shift = 1.0 - min_z.min(0.0);
        z.iter_mut().for_each(|v| *v += shift);
    }

    let max_step = |v: &[f64], dv: &[f64]| -> f64 {
        v.iter()
            .zip(dv)
            .filter(|(_, d)| **d < 0.0)
            .map(|(v, d)| -v / d)
            .fold(1.0, f64::min)
    };

    for it in 0..=max_iter {
        let px = st.p_mul(&x);
        let aty = transpose_mul(&y, &z);
        let rd: Vec<f64> = (0..n).map(|i| px[i] + st.q[i] + aty[i]).collect();
        let ex = e_mul(&x);
        let re: Vec<f64> = ex.iter().zip(&b).map(|(a, b)| a - b).collect();
        let gx = g_mul(&x);
        let ri: Vec<f64> = (0..mi).map(|j| gx[j] + s[j] - h[j]).collect();
        let comp = s.iter().zip(&z).map(|(a, b)| a * b).fold(0.0, f64::max);
        let small = 0.01 * tol;
        if inf_norm(&rd) <= small && inf_norm(&re) <= small && inf_norm(&ri) <= small && comp <= small {
            let mut ys = vec![0.0; m];
            for (j, &r) in eq_rows.iter().enumerate() {
                ys[r] = y[j];
            }
            for (j, &(r, sign)) in g_rows.iter().enumerate() {
                ys[r] += sign * z[j];
            }
            return Some((x, ys, it));
        }
        if it == max_iter {
            break;
        }
        let mu = if mi > 0 { dot(&s, &z) / mi as f64 } else { 0.0 };
        let w: Vec<f64> = s.iter().zip(&z).map(|(s, z)| s / z).collect();

        let base_rhs = |rc_over_z: &[f64]| -> Vec<f64> {
            let mut rhs = Vec::with_capacity(dim);
            rhs.extend(rd.iter().map(|v| -v));
            rhs.extend(re.iter().map(|v| -v));
            rhs.extend((0..mi).map(|j| -ri[j] + rc_over_z[j]));
            rhs
        };
        // predictor
        let mut aff = base_rhs(&s);
        factor_and_solve(&w, &mut [&mut aff])?;
        let dz_aff = aff[n + me..].to_vec();
        let ds_aff: Vec<f64> = (0..mi).map(|j| -s[j] - w[j] * dz_aff[j]).collect();
        let alpha_aff = max_step(&s, &ds_aff).min(max_step(&z, &dz_aff));
        let mu_aff = if mi > 0 {
            (0..mi)
                .map(|j| (s[j] + alpha_aff * ds_aff[j]) * (z[j] + alpha_aff * dz_aff[j]))
                .sum::<f64>()
                / mi as f64
        } else {
            0.0
        };
        let sigma = if mu > 0.0 { (mu_aff / mu).clamp(0.0, 1.0).powi(3) } else { 0.0 };
        // corrector
        let rc: Vec<f64> = (0..mi)
            .map(|j| s[j] * z[j] + ds_aff[j] * dz_aff[j] - sigma * mu)
            .collect();
        let rc_over_z: Vec<f64> = rc.iter().zip(&z).map(|(r, z)| r / z).collect();
        let mut step = base_rhs(&rc_over_z);
        factor_and_solve(&w, &mut [&mut step])?;
        let dz = &step[n + me..];
        let ds: Vec<f64> = (0..mi).map(|j| (-rc[j] - s[j] * dz[j]) / z[j]).collect();
        let alpha = (0.99 * max_step(&s, &ds).min(max_step(&z, dz))).min(1.0);
        for i in 0..n {
            x[i] += alpha * step[i];
        }
        for j in 0..me {
            y[j] += alpha * step[n + j];
        }
        for j in 0..mi {
            s[j] += alpha * ds[j];
            z[j] += alpha * dz[j];
        }
        if x.iter().chain(&z).any(|v| !v.is_finite() || v.abs() > 1e12) {
            return None;
        }
    }
    None
}

/// Solves the equality-constrained problem on the guessed active set and
/// accepts it only if it is primal-dual optimal to `tol`.
fn polish(s: &Stacked, x: &[f64], y: &[f64], tol: f64) -> Option<(Vec<f64>, Vec<f64>)> {
    let (n, m) = (s.n, s.m);
    let ax = s.a.mul(x);
    // +1: upper bound active, -1: lower bound active, 0: inactive
    let active: Vec<i8> = (0..m)
        .map(|i| {
            if s.l[i] == s.u[i] {
                if y[i] >= 0.0 { 1 } else { -1 }
            } else if s.u[i].is_finite() && (s.u[i] - ax[i] < y[i]) {
                1
            } else if s.l[i].is_finite() && (ax[i] - s.l[i] < -y[i]) {
                -1
            } else {
                0
            }
        })
        .collect();
    let rows: Vec<usize> = (0..m).filter(|&i| active[i] != 0).collect();
    let k = rows.len();
    let mut row_of = vec![usize::MAX; m];
    for (j, &r) in rows.iter().enumerate() {
        row_of[r] = j;
    }
    let delta = 1e-7;
    let mut entries = s.p_entries.clone();
    let mut values = s.p_values.clone();
    let mut exact_values = s.p_values.clone();
    for i in 0..n {
        entries.push((i, i));
        values.push(delta);
        exact_values.push(0.0);
    }
    let mut jac = Vec::new();
    for &(r, c, v) in &s.a.entries {
        if row_of[r] != usize::MAX {
            entries.push((n + row_of[r], c));
            values.push(v);
            exact_values.push(v);
            jac.push((row_of[r], c));
        }
    }
    for j in 0..k {
        entries.push((n + j, n + j));
        values.push(-delta);
        exact_values.push(0.0);
    }
    let order = constraints_after_variables(n, k, &jac);
    let mut ldl = SparseLdl::new(n + k, &entries, &order);
    if ldl.factor(&values).is_err() || ldl.positive_pivots() != n {
        return None;
    }
    let mut b = vec![0.0; n + k];
    for i in 0..n {
        b[i] = -s.q[i];
    }
    for (j, &r) in rows.iter().enumerate() {
        b[n + j] = if active[r] > 0 { s.u[r] } else { s.l[r] };
    }
    let mut sol = b.clone();
    ldl.solve(&mut sol);
    let mut resid = vec![0.0; n + k];
    for _ in 0..25 {
        symmetric_mul(&entries, &exact_values, &sol, &mut resid);
        let mut corr: Vec<f64> = b.iter().zip(&resid).map(|(bi, ri)| bi - ri).collect();
        if inf_norm(&corr) < 1e-14 * (1.0 + inf_norm(&b)) {
            break;
        }
        ldl.solve(&mut corr);
        sol.iter_mut().zip(&corr).for_each(|(s, c)| *s += c);
    }
    let xp = sol[..n].to_vec();
    let mut yp = vec![0.0; m];
    for (j, &r) in rows.iter().enumerate() {
        yp[r] = sol[n + j];
    }
    // Multiplier signs must match the bound they sit on.
    for &r in &rows {
        if s.l[r] != s.u[r] && (active[r] as f64) * yp[r] < -tol {
            return None;
        }
        if s.l[r] != s.u[r] && (active[r] as f64) * yp[r] < 0.0 {
            yp[r] = 0.0;
        }
    }
    let (prim, dual) = s.residuals(&xp, &yp);
    if prim <= tol && dual <= tol && s.complementarity(&xp, &yp) <= tol {
        Some((xp, yp))
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn active_lower_bound() {
        let mut qp = QuadraticProgram::new(1);
        qp.add_hessian(0, 0, 2.0);
        qp.add_bound(0, 1.0, f64::INFINITY);
        let sol = solve_qp_with_settings(&qp, &QpSettings::default()).unwrap();
        assert_eq!(sol.report.status, QpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-8);
        assert!((sol.y[0] + 2.0).abs() < 1e-6);
    }

    #[test]
    fn symmetric_equality() {
        let mut qp = QuadraticProgram::new(2);
        qp.add_hessian(0, 0, 2.0);
        qp.add_hessian(1, 1, 2.0);
        qp.add_equality(&[(0, 1.0), (1, 1.0)], 1.0);
        let sol = solve_qp_with_settings(&qp, &QpSettings::default()).unwrap();
        assert_eq!(sol.report.status, QpStatus::Optimal);
        assert!((sol.x[0] - 0.5).abs() < 1e-8 && (sol.x[1] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn infeasible_bounds_are_certified() {
        let mut qp = QuadraticProgram::new(2);
        qp.add_hessian(0, 0, 1.0);
        qp.add_hessian(1, 1, 1.0);
        qp.add_inequality(&[(0, 1.0), (1, 1.0)], 3.0, f64::INFINITY);
        qp.add_bound(0, -1.0, 1.0);
        qp.add_bound(1, -1.0, 1.0);
        let sol = solve_qp_with_settings(&qp, &QpSettings::default()).unwrap();
        assert_eq!(sol.report.status, QpStatus::Infeasible);
    }

    #[test]
    fn rejects_indefinite_hessian() {
        let mut qp = QuadraticProgram::new(2);
        qp.add_hessian(0, 0, 1.0);
        qp.add_hessian(1, 1, -1.0);
        assert_eq!(solve_qp_with_settings(&qp, &QpSettings::default()), Err(QpError::NotPositiveSemidefinite));
        let mut lower = QuadraticProgram::new(2);
        lower.p.push(1, 0, 1.0);
        assert_eq!(lower.validate(), Err(QpError::NotUpperTriangular));
    }

    #[test]
    fn deterministic_reports() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut qp = QuadraticProgram::new(5);
        for i in 0..5 {
            qp.add_hessian(i, i, 1.0 + rng.gen::<f64>());
            qp.q[i] = rng.gen::<f64>() - 0.5;
            qp.add_bound(i, -0.1, 0.1);
        }
        let a = solve_qp_with_settings(&qp, &QpSettings::default()).unwrap();
        let b = solve_qp_with_settings(&qp, &QpSettings::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn linear_objective_scaling() {
        // P = 0: scaling q by c scales the optimum by c and keeps the argmin.
        let mut qp = QuadraticProgram::new(2);
        qp.q = vec![1.0, 2.0];
        qp.add_bound(0, -1.0, 1.0);
        qp.add_bound(1, -2.0, 3.0);
        let base = solve_qp_with_settings(&qp, &QpSettings::default()).unwrap();
        qp.q = vec![3.0, 6.0];
        let scaled = solve_qp_with_settings(&qp, &QpSettings::default()).unwrap();
        assert_eq!(base.report.status, QpStatus::Optimal);
        assert!((base.x[0] + 1.0).abs() < 1e-8 && (base.x[1] + 2.0).abs() < 1e-8);
        assert!((scaled.report.objective - 3.0 * base.report.objective).abs() < 1e-7);
        assert!((scaled.x[0] - base.x[0]).abs() < 1e-8);
    }
}
