//! Primal-dual interior-point method with a filter line search for
//! `min f(x)  s.t.  cl <= c(x) <= cu,  xl <= x <= xu`.
//!
//! Rows with `cl == cu` are equalities; every other row gets a slack `s`
//! with `c(x) - s = 0` and the bounds moved onto `s`. Slacks are condensed
//! out of the Newton system, which leaves the quasidefinite matrix
//! `[W + Sigma + dw I, J^T; J, -D]` for the sparse `LDL^T`. Inertia is
//! corrected by growing `dw`.

use serde::{Deserialize, Serialize};

use crate::sparse::{constraints_after_variables, symmetric_mul, SparseLdl};

pub trait NlpProblem {
    fn num_vars(&self) -> usize;
    fn num_rows(&self) -> usize;
    fn var_bounds(&self) -> (&[f64], &[f64]);
    fn row_bounds(&self) -> (&[f64], &[f64]);
    fn objective(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], g: &mut [f64]);
    fn constraints(&self, x: &[f64], c: &mut [f64]);
    /// `(row, var)` positions; values come back in the same order.
    fn jacobian_pattern(&self) -> &[(usize, usize)];
    fn jacobian_values(&self, x: &[f64], v: &mut [f64]);
    /// `(var, var)` positions, each symmetric pair at most once per entry;
    /// duplicates are summed.
    fn hessian_pattern(&self) -> &[(usize, usize)];
    /// `sigma * hess f + sum_i y_i * hess c_i`.
    fn hessian_values(&self, x: &[f64], sigma: f64, y: &[f64], v: &mut [f64]);
    /// Elimination order over the `n + m` KKT unknowns (rows numbered after
    /// the variables).
    fn elimination_order(&self) -> Vec<usize> {
        constraints_after_variables(self.num_vars(), self.num_rows(), self.jacobian_pattern())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IpmSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub mu_init: f64,
    /// Relative distance initial points keep from their bounds.
    pub bound_push: f64,
}

impl Default for IpmSettings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 500,
            mu_init: 0.1,
            bound_push: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IpmStatus {
    Optimal,
    MaxIterations,
    /// The line search could not reduce infeasibility.
    Infeasible,
    NumericalFailure,
}

/// Unscaled infinity norms at the returned point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
    /// Multiplier-size divisor applied to stationarity for the stopping test.
    pub dual_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IpmResult {
    pub x: Vec<f64>,
    /// Row multipliers, sign convention `grad f + J^T y - zl + zu = 0`.
    pub y: Vec<f64>,
    pub status: IpmStatus,
    pub iterations: usize,
    pub residuals: KktResiduals,
    pub objective: f64,
    /// `(objective, infeasibility, mu)` after every iteration.
    pub trace: Vec<(f64, f64, f64)>,
}

const KAPPA_EPS: f64 = 10.0;
const KAPPA_MU: f64 = 0.2;
const THETA_MU: f64 = 1.5;
const GAMMA_THETA: f64 = 1e-5;
const GAMMA_PHI: f64 = 1e-5;
const ETA_PHI: f64 = 1e-4;
const S_THETA: f64 = 1.1;
const S_PHI: f64 = 2.3;
const DELTA_C: f64 = 1e-10;
const KAPPA_SIGMA: f64 = 1e10;
const MAX_BACKTRACK: usize = 40;

struct Layout {
    n: usize,
    m: usize,
    /// Slack index for each row, `None` for equalities.
    slack_of_row: Vec<Option<usize>>,
    slack_rows: Vec<usize>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    target: Vec<f64>,
}

impl Layout {
    fn new<P: NlpProblem + ?Sized>(p: &P) -> Self {
        let (n, m) = (p.num_vars(), p.num_rows());
        let (xl, xu) = p.var_bounds();
        let (cl, cu) = p.row_bounds();
        let mut lo = xl.to_vec();
        let mut hi = xu.to_vec();
        let mut slack_of_row = vec![None; m];
        let mut slack_rows = Vec::new();
        for i in 0..m {
            if cl[i] != cu[i] {
                slack_of_row[i] = Some(slack_rows.len());
                slack_rows.push(i);
                lo.push(cl[i]);
                hi.push(cu[i]);
            }
        }
        Self { n, m, slack_of_row, slack_rows, lo, hi, target: cl.to_vec() }
    }

    fn nw(&self) -> usize {
        self.lo.len()
    }
}

struct Iterate {
    w: Vec<f64>,
    y: Vec<f64>,
    zl: Vec<f64>,
    zu: Vec<f64>,
}

fn push_into_bounds(v: f64, lo: f64, hi: f64, kappa: f64) -> f64 {
    let pl = if hi.is_finite() { (kappa * lo.abs().max(1.0)).min(kappa * (hi - lo)) } else { kappa * lo.abs().max(1.0) };
    let pu = if lo.is_finite() { (kappa * hi.abs().max(1.0)).min(kappa * (hi - lo)) } else { kappa * hi.abs().max(1.0) };
    let mut v = v;
    if lo.is_finite() {
        v = v.max(lo + pl);
    }
    if hi.is_finite() {
        v = v.min(hi - pu);
    }
    v
}

struct Evaluator<'a, P: NlpProblem + ?Sized> {
    p: &'a P,
    lay: &'a Layout,
    c: Vec<f64>,
}

impl<P: NlpProblem + ?Sized> Evaluator<'_, P> {
    /// Fills `self.c` and returns the row residuals `c(x) - target / slack`.
    fn residual(&mut self, w: &[f64]) -> Vec<f64> {
        self.p.constraints(&w[..self.lay.n], &mut self.c);
        (0..self.lay.m)
            .map(|i| match self.lay.slack_of_row[i] {
                Some(s) => self.c[i] - w[self.lay.n + s],
                None => self.c[i] - self.lay.target[i],
            })
            .collect()
    }

    fn barrier(&self, w: &[f64], mu: f64) -> f64 {
        let mut phi = self.p.objective(&w[..self.lay.n]);
        for i in 0..w.len() {
            if self.lay.lo[i].is_finite() {
                phi -= mu * (w[i] - self.lay.lo[i]).ln();
            }
            if self.lay.hi[i].is_finite() {
                phi -= mu * (self.lay.hi[i] - w[i]).ln();
            }
        }
        phi
    }
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn linf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn solve<P: NlpProblem + ?Sized>(p: &P, x0: &[f64], settings: &IpmSettings) -> IpmResult {
    let lay = Layout::new(p);
    let (n, m, nw) = (lay.n, lay.m, lay.nw());
    assert_eq!(x0.len(), n);
    let mut ev = Evaluator { p, lay: &lay, c: vec![0.0; m] };

    // Initial point.
    let mut w: Vec<f64> = x0.iter().enumerate().map(|(i, &v)| push_into_bounds(v, lay.lo[i], lay.hi[i], settings.bound_push)).collect();
    p.constraints(&w, &mut ev.c);
    for (s, &row) in lay.slack_rows.iter().enumerate() {
        let i = n + s;
        w.push(push_into_bounds(ev.c[row], lay.lo[i], lay.hi[i], settings.bound_push));
    }
    let mut mu = settings.mu_init;
    let mut it = Iterate {
        y: vec![0.0; m],
        zl: (0..nw).map(|i| if lay.lo[i].is_finite() { mu / (w[i] - lay.lo[i]) } else { 0.0 }).collect(),
        zu: (0..nw).map(|i| if lay.hi[i].is_finite() { mu / (lay.hi[i] - w[i]) } else { 0.0 }).collect(),
        w,
    };

    let jac_pat = p.jacobian_pattern().to_vec();
    let hess_pat = p.hessian_pattern().to_vec();
    let mut jac = vec![0.0; jac_pat.len()];
    let mut hess = vec![0.0; hess_pat.len()];
    let mut grad = vec![0.0; n];

    // KKT pattern: Hessian, diagonal of the variables, Jacobian, row diagonal.
    let mut kkt_pat: Vec<(usize, usize)> = hess_pat.clone();
    kkt_pat.extend((0..n).map(|i| (i, i)));
    kkt_pat.extend(jac_pat.iter().map(|&(r, c)| (n + r, c)));
    kkt_pat.extend((0..m).map(|r| (n + r, n + r)));
    let order = p.elimination_order();
    let mut ldl = SparseLdl::new(n + m, &kkt_pat, &order);
    let mut kkt = vec![0.0; kkt_pat.len()];
    let (h0, d0, j0, r0) = (0, hess_pat.len(), hess_pat.len() + n, hess_pat.len() + n + jac_pat.len());

    let mut filter: Vec<(f64, f64)> = Vec::new();
    let mut last_dw = 0.0;
    let mut trace = Vec::new();
    let status;
    let mut residuals;
    let mut iterations = 0;
    let mut failed_searches = 0;

    let mut r = ev.residual(&it.w);
    p.gradient(&it.w[..n], &mut grad);
    p.jacobian_values(&it.w[..n], &mut jac);
    let theta0 = l1(&r);
    let theta_max = 1e4 * theta0.max(1.0);
    let theta_min = 1e-4 * theta0.max(1.0);

    loop {
        // Optimality measures.
        let mut stat = vec![0.0; nw];
        stat[..n].copy_from_slice(&grad);
        for (&(row, col), &v) in jac_pat.iter().zip(&jac) {
            stat[col] += v * it.y[row];
        }
        for (s, &row) in lay.slack_rows.iter().enumerate() {
            stat[n + s] -= it.y[row];
        }
        for i in 0..nw {
            stat[i] += it.zu[i] - it.zl[i];
        }
        let compl = |mu: f64| -> f64 {
            let mut e: f64 = 0.0;
            for i in 0..nw {
                if lay.lo[i].is_finite() {
                    e = e.max(((it.w[i] - lay.lo[i]) * it.zl[i] - mu).abs());
                }
                if lay.hi[i].is_finite() {
                    e = e.max(((lay.hi[i] - it.w[i]) * it.zu[i] - mu).abs());
                }
            }
            e
        };
        let nb = (0..nw).filter(|&i| lay.lo[i].is_finite()).count() + (0..nw).filter(|&i| lay.hi[i].is_finite()).count();
        let zsum = l1(&it.zl) + l1(&it.zu);
        let s_d = ((l1(&it.y) + zsum) / ((m + nb).max(1) as f64)).max(100.0) / 100.0;
        let s_c = (zsum / (nb.max(1) as f64)).max(100.0) / 100.0;
        let (stat_inf, prim_inf) = (linf(&stat), linf(&r));
        residuals = KktResiduals {
            stationarity: stat_inf,
            primal: prim_inf,
            complementarity: compl(0.0),
            dual_scale: s_d,
        };
        let err0 = (stat_inf / s_d).max(prim_inf).max(compl(0.0) / s_c);
        if err0 <= settings.tol {
            status = IpmStatus::Optimal;
            break;
        }
        if iterations >= settings.max_iter {
            status = IpmStatus::MaxIterations;
            break;
        }
        // Barrier update.
        while (stat_inf / s_d).max(prim_inf).max(compl(mu) / s_c) <= KAPPA_EPS * mu && mu > settings.tol / 10.0 {
            mu = (settings.tol / 10.0).max((KAPPA_MU * mu).min(mu.powf(THETA_MU)));
            filter.clear();
        }
        let tau = (1.0 - mu).max(0.99);

        // Newton system.
        p.hessian_values(&it.w[..n], 1.0, &it.y, &mut hess);
        let sigma: Vec<f64> = (0..nw)
            .map(|i| {
                let mut s = 0.0;
                if lay.lo[i].is_finite() {
                    s += it.zl[i] / (it.w[i] - lay.lo[i]);
                }
                if lay.hi[i].is_finite() {
                    s += it.zu[i] / (lay.hi[i] - it.w[i]);
                }
                s
            })
            .collect();
        let barrier_grad: Vec<f64> = (0..nw)
            .map(|i| {
                let mut g = 0.0;
                if lay.lo[i].is_finite() {
                    g -= mu / (it.w[i] - lay.lo[i]);
                }
                if lay.hi[i].is_finite() {
                    g += mu / (lay.hi[i] - it.w[i]);
                }
                g
            })
            .collect();
        // Right-hand side: -(grad f + J^T y + barrier) and -r.
        let mut rhs_x = vec![0.0; n];
        for i in 0..n {
            rhs_x[i] = -(grad[i] + barrier_grad[i]);
        }
        for (&(row, col), &v) in jac_pat.iter().zip(&jac) {
            rhs_x[col] -= v * it.y[row];
        }
        let g_s: Vec<f64> = lay
            .slack_rows
            .iter()
            .enumerate()
            .map(|(s, &row)| -it.y[row] + barrier_grad[n + s])
            .collect();

        kkt[h0..d0].copy_from_slice(&hess);
        kkt[j0..r0].copy_from_slice(&jac);
        let mut delta_w = 0.0;
        let mut delta_c = DELTA_C;
        let mut attempts = 0;
        let factored = loop {
            for i in 0..n {
                kkt[d0 + i] = sigma[i] + delta_w;
            }
            for row in 0..m {
                kkt[r0 + row] = match lay.slack_of_row[row] {
                    Some(s) => -(delta_c + 1.0 / (sigma[n + s] + delta_w).max(1e-300)),
                    None => -delta_c,
                };
            }
            let ok = ldl.factor(&kkt).is_ok() && ldl.positive_pivots() == n;
            if ok {
                break true;
            }
            attempts += 1;
            if attempts > 60 {
                break false;
            }
            if attempts == 1 {
                delta_c = 1e-8 * mu.powf(0.25);
            }
            delta_w = if delta_w == 0.0 {
                if last_dw == 0.0 { 1e-4 } else { f64::max(last_dw / 3.0, 1e-20) }
            } else if last_dw == 0.0 {
                delta_w * 100.0
            } else {
                delta_w * 8.0
            };
            if delta_w > 1e40 {
                break false;
            }
        };
        if !factored {
            status = IpmStatus::NumericalFailure;
            break;
        }
        if delta_w > 0.0 {
            last_dw = delta_w;
        }
        let mut rhs = vec![0.0; n + m];
        rhs[..n].copy_from_slice(&rhs_x);
        for row in 0..m {
            rhs[n + row] = match lay.slack_of_row[row] {
                Some(s) => -r[row] - g_s[s] / (sigma[n + s] + delta_w),
                None => -r[row],
            };
        }
        let mut sol = rhs.clone();
        ldl.solve(&mut sol);
        // Iterative refinement against the same matrix.
        let mut ax = vec![0.0; n + m];
        for _ in 0..2 {
            symmetric_mul(&kkt_pat, &kkt, &sol, &mut ax);
            let mut res: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
            if linf(&res) <= 1e-14 * (1.0 + linf(&rhs)) {
                break;
            }
            ldl.solve(&mut res);
            sol.iter_mut().zip(&res).for_each(|(s, d)| *s += d);
        }
        let mut dw = sol[..n].to_vec();
        let dy = sol[n..].to_vec();
        for (s, &row) in lay.slack_rows.iter().enumerate() {
            dw.push((dy[row] - g_s[s]) / (sigma[n + s] + delta_w));
        }
        let dzl: Vec<f64> = (0..nw)
            .map(|i| if lay.lo[i].is_finite() { mu / (it.w[i] - lay.lo[i]) - it.zl[i] - it.zl[i] / (it.w[i] - lay.lo[i]) * dw[i] } else { 0.0 })
            .collect();
        let dzu: Vec<f64> = (0..nw)
            .map(|i| if lay.hi[i].is_finite() { mu / (lay.hi[i] - it.w[i]) - it.zu[i] + it.zu[i] / (lay.hi[i] - it.w[i]) * dw[i] } else { 0.0 })
            .collect();

        // Fraction to the boundary.
        let mut alpha_max: f64 = 1.0;
        let mut alpha_z: f64 = 1.0;
        for i in 0..nw {
            if lay.lo[i].is_finite() && dw[i] < 0.0 {
                alpha_max = alpha_max.min(-tau * (it.w[i] - lay.lo[i]) / dw[i]);
            }
            if lay.hi[i].is_finite() && dw[i] > 0.0 {
                alpha_max = alpha_max.min(tau * (lay.hi[i] - it.w[i]) / dw[i]);
            }
            if dzl[i] < 0.0 {
                alpha_z = alpha_z.min(-tau * it.zl[i] / dzl[i]);
            }
            if dzu[i] < 0.0 {
                alpha_z = alpha_z.min(-tau * it.zu[i] / dzu[i]);
            }
        }

        // Filter line search.
        let theta = l1(&r);
        let phi = ev.barrier(&it.w, mu);
        let gd: f64 = (0..nw).map(|i| (if i < n { grad[i] } else { 0.0 } + barrier_grad[i]) * dw[i]).sum();
        let in_filter = |f: &[(f64, f64)], th: f64, ph: f64| f.iter().any(|&(ft, fp)| th >= ft && ph >= fp);
        let step_tiny = (0..nw).all(|i| (alpha_max * dw[i]).abs() <= 1e-14 * (1.0 + it.w[i].abs()));
        let mut accepted: Option<(f64, Vec<f64>, Vec<f64>)> = None;
        let mut alpha = alpha_max;
        if step_tiny {
            let wt: Vec<f64> = (0..nw).map(|i| it.w[i] + alpha * dw[i]).collect();
            let rt = ev.residual(&wt);
            accepted = Some((alpha, wt, rt));
        }
        let mut best_merit: Option<(f64, f64)> = None;
        let nu = 10.0 * linf(&it.y.iter().zip(&dy).map(|(a, b)| a + b).collect::<Vec<_>>()).max(1.0);
        for _ in 0..MAX_BACKTRACK {
            if accepted.is_some() {
                break;
            }
            let wt: Vec<f64> = (0..nw).map(|i| it.w[i] + alpha * dw[i]).collect();
            let rt = ev.residual(&wt);
            let th_t = l1(&rt);
            let ph_t = ev.barrier(&wt, mu);
            if !ph_t.is_finite() || !th_t.is_finite() {
                alpha *= 0.5;
                continue;
            }
            let merit_ok = ph_t + nu * th_t <= phi + nu * theta + ETA_PHI * alpha * (gd - nu * theta);
            if merit_ok && best_merit.is_none() {
                best_merit = Some((alpha, th_t));
            }
            let ok = if th_t > theta_max || in_filter(&filter, th_t, ph_t) {
                false
            } else if theta <= theta_min && gd < 0.0 && alpha * (-gd).powf(S_PHI) > theta.powf(S_THETA) {
                ph_t <= phi + ETA_PHI * alpha * gd
            } else {
                let good = th_t <= (1.0 - GAMMA_THETA) * theta || ph_t <= phi - GAMMA_PHI * theta;
                if good {
                    filter.push(((1.0 - GAMMA_THETA) * theta, phi - GAMMA_PHI * theta));
                }
                good
            };
            if ok {
                accepted = Some((alpha, wt, rt));
                break;
            }
            alpha *= 0.5;
        }
        if accepted.is_none() {
            // Fall back on the exact-penalty merit along the same direction.
            if let Some((a, _)) = best_merit {
                let wt: Vec<f64> = (0..nw).map(|i| it.w[i] + a * dw[i]).collect();
                let rt = ev.residual(&wt);
                filter.clear();
                accepted = Some((a, wt, rt));
            }
        }
        let Some((alpha, wt, rt)) = accepted else {
            failed_searches += 1;
            if failed_searches > 3 {
                status = if theta > settings.tol { IpmStatus::Infeasible } else { IpmStatus::NumericalFailure };
                break;
            }
            // Perturb the barrier and retry from the same point.
            filter.clear();
            mu = (mu * 10.0).min(settings.mu_init);
            iterations += 1;
            continue;
        };
        failed_searches = 0;
        it.w = wt;
        r = rt;
        for i in 0..m {
            it.y[i] += alpha * dy[i];
        }
        for i in 0..nw {
            it.zl[i] += alpha_z * dzl[i];
            it.zu[i] += alpha_z * dzu[i];
            if lay.lo[i].is_finite() {
                let g = it.w[i] - lay.lo[i];
                it.zl[i] = it.zl[i].clamp(mu / (KAPPA_SIGMA * g), KAPPA_SIGMA * mu / g);
            }
            if lay.hi[i].is_finite() {
                let g = lay.hi[i] - it.w[i];
                it.zu[i] = it.zu[i].clamp(mu / (KAPPA_SIGMA * g), KAPPA_SIGMA * mu / g);
            }
        }
        p.gradient(&it.w[..n], &mut grad);
        p.jacobian_values(&it.w[..n], &mut jac);
        iterations += 1;
        trace.push((p.objective(&it.w[..n]), l1(&r), mu));
    }

    IpmResult {
        objective: p.objective(&it.w[..n]),
        x: it.w[..n].to_vec(),
        y: it.y,
        status,
        iterations,
        residuals,
        trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `min (x0 - 1)^2 + (x1 - 2)^2  s.t.  x0^2 + x1^2 <= 1`, optionally with
    /// `x0 = x1`.
    struct Circle {
        eq: bool,
        xl: Vec<f64>,
        xu: Vec<f64>,
        cl: Vec<f64>,
        cu: Vec<f64>,
        jp: Vec<(usize, usize)>,
        hp: Vec<(usize, usize)>,
    }

    impl Circle {
        fn new(eq: bool) -> Self {
            let mut cl = vec![f64::NEG_INFINITY];
            let mut cu = vec![1.0];
            let mut jp = vec![(0, 0), (0, 1)];
            if eq {
                cl.push(0.0);
                cu.push(0.0);
                jp.extend([(1, 0), (1, 1)]);
            }
            Self {
                eq,
                xl: vec![f64::NEG_INFINITY; 2],
                xu: vec![f64::INFINITY; 2],
                cl,
                cu,
                jp,
                hp: vec![(0, 0), (1, 1)],
            }
        }
    }

    impl NlpProblem for Circle {
        fn num_vars(&self) -> usize {
            2
        }
        fn num_rows(&self) -> usize {
            1 + usize::from(self.eq)
        }
        fn var_bounds(&self) -> (&[f64], &[f64]) {
            (&self.xl, &self.xu)
        }
        fn row_bounds(&self) -> (&[f64], &[f64]) {
            (&self.cl, &self.cu)
        }
        fn objective(&self, x: &[f64]) -> f64 {
            (x[0] - 1.0).powi(2) + (x[1] - 2.0).powi(2)
        }
        fn gradient(&self, x: &[f64], g: &mut [f64]) {
            g[0] = 2.0 * (x[0] - 1.0);
            g[1] = 2.0 * (x[1] - 2.0);
        }
        fn constraints(&self, x: &[f64], c: &mut [f64]) {
            c[0] = x[0] * x[0] + x[1] * x[1];
            if self.eq {
                c[1] = x[0] - x[1];
            }
        }
        fn jacobian_pattern(&self) -> &[(usize, usize)] {
            &self.jp
        }
        fn jacobian_values(&self, x: &[f64], v: &mut [f64]) {
            v[0] = 2.0 * x[0];
            v[1] = 2.0 * x[1];
            if self.eq {
                v[2] = 1.0;
                v[3] = -1.0;
            }
        }
        fn hessian_pattern(&self) -> &[(usize, usize)] {
            &self.hp
        }
        fn hessian_values(&self, _x: &[f64], sigma: f64, y: &[f64], v: &mut [f64]) {
            v[0] = 2.0 * sigma + 2.0 * y[0];
            v[1] = 2.0 * sigma + 2.0 * y[0];
        }
    }

    #[test]
    fn projection_onto_disc() {
        let res = solve(&Circle::new(false), &[0.0, 0.0], &IpmSettings::default());
        assert_eq!(res.status, IpmStatus::Optimal);
        let norm = 5f64.sqrt();
        assert!((res.x[0] - 1.0 / norm).abs() < 1e-5);
        assert!((res.x[1] - 2.0 / norm).abs() < 1e-5);
    }

    #[test]
    fn disc_and_diagonal() {
        let res = solve(&Circle::new(true), &[0.3, -0.2], &IpmSettings::default());
        assert_eq!(res.status, IpmStatus::Optimal);
        let h = 0.5f64.sqrt();
        assert!((res.x[0] - h).abs() < 1e-5 && (res.x[1] - h).abs() < 1e-5);
        // grad f + J^T y = 0: 2(x0 - 1) + 2 x0 y0 + y1 = 0
        assert!((2.0 * (res.x[0] - 1.0) + 2.0 * res.x[0] * res.y[0] + res.y[1]).abs() < 1e-5);
    }

    #[test]
    fn infeasible_equalities() {
        struct Clash(Vec<f64>, Vec<f64>, Vec<(usize, usize)>, Vec<(usize, usize)>);
        impl NlpProblem for Clash {
            fn num_vars(&self) -> usize {
                1
            }
            fn num_rows(&self) -> usize {
                1
            }
            fn var_bounds(&self) -> (&[f64], &[f64]) {
                (&self.0[..1], &self.1[..1])
            }
            fn row_bounds(&self) -> (&[f64], &[f64]) {
                (&self.0[1..], &self.1[1..])
            }
            fn objective(&self, x: &[f64]) -> f64 {
                x[0] * x[0]
            }
            fn gradient(&self, x: &[f64], g: &mut [f64]) {
                g[0] = 2.0 * x[0];
            }
            fn constraints(&self, x: &[f64], c: &mut [f64]) {
                c[0] = x[0] * x[0];
            }
            fn jacobian_pattern(&self) -> &[(usize, usize)] {
                &self.2
            }
            fn jacobian_values(&self, x: &[f64], v: &mut [f64]) {
                v[0] = 2.0 * x[0];
            }
            fn hessian_pattern(&self) -> &[(usize, usize)] {
                &self.3
            }
            fn hessian_values(&self, _x: &[f64], sigma: f64, y: &[f64], v: &mut [f64]) {
                v[0] = 2.0 * sigma + 2.0 * y[0];
            }
        }
        // x^2 = -1 has no solution.
        let p = Clash(vec![f64::NEG_INFINITY, -1.0], vec![f64::INFINITY, -1.0], vec![(0, 0)], vec![(0, 0)]);
        let res = solve(&p, &[0.5], &IpmSettings { max_iter: 200, ..IpmSettings::default() });
        assert_ne!(res.status, IpmStatus::Optimal);
    }
}
