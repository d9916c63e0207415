use nalgebra::{DMatrix, DVector};
use obca_core::qp_solver::{solve_qp, QpStatus, QuadraticProgram};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense KKT residuals (stationarity, primal, complementarity, sign) computed
/// from scratch from the problem data.
fn kkt_residuals(qp: &QuadraticProgram, x: &[f64], y: &[f64]) -> [f64; 4] {
    let n = qp.n;
    let mut p = DMatrix::<f64>::zeros(n, n);
    for &(r, c, v) in &qp.p.entries {
        p[(r, c)] += v;
        if r != c {
            p[(c, r)] += v;
        }
    }
    let m_eq = qp.a_eq.rows;
    let m = m_eq + qp.a_in.rows;
    let mut a = DMatrix::<f64>::zeros(m, n);
    for &(r, c, v) in &qp.a_eq.entries {
        a[(r, c)] += v;
    }
    for &(r, c, v) in &qp.a_in.entries {
        a[(m_eq + r, c)] += v;
    }
    let xv = DVector::from_column_slice(x);
    let yv = DVector::from_column_slice(y);
    let stat = (&p * &xv + DVector::from_column_slice(&qp.q) + a.transpose() * &yv).amax();
    let ax = &a * &xv;
    let mut prim = 0.0_f64;
    let mut comp = 0.0_f64;
    let mut sign = 0.0_f64;
    for i in 0..m {
        let (lo, hi) = if i < m_eq {
            (qp.b_eq[i], qp.b_eq[i])
        } else {
            (qp.lower[i - m_eq], qp.upper[i - m_eq])
        };
        prim = prim.max(lo - ax[i]).max(ax[i] - hi);
        if i >= m_eq {
            if y[i] > 0.0 {
                comp = comp.max(y[i] * (hi - ax[i]).abs().min(1e300));
                sign = sign.max(if hi.is_finite() { 0.0 } else { y[i] });
            } else if y[i] < 0.0 {
                comp = comp.max(-y[i] * (ax[i] - lo).abs().min(1e300));
                sign = sign.max(if lo.is_finite() { 0.0 } else { -y[i] });
            }
        }
    }
    [stat, prim, comp, sign]
}

fn random_qp(seed: u64, n: usize) -> QuadraticProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut qp = QuadraticProgram::new(n);
    // P = M M^T with rank n/2, so the problem is only semidefinite.
    let rank = n / 2;
    let m: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..rank).map(|_| rng.gen::<f64>() - 0.5).collect())
        .collect();
    for i in 0..n {
        for j in i..n {
            let v: f64 = (0..rank).map(|k| m[i][k] * m[j][k]).sum();
            qp.add_hessian(i, j, v);
        }
        qp.q[i] = rng.gen::<f64>() - 0.5;
    }
    for _ in 0..3 {
        let coeffs: Vec<(usize, f64)> = (0..n).map(|j| (j, rng.gen::<f64>() - 0.5)).collect();
        qp.add_equality(&coeffs, 0.1 * (rng.gen::<f64>() - 0.5));
    }
    for _ in 0..8 {
        let coeffs: Vec<(usize, f64)> = (0..n).map(|j| (j, rng.gen::<f64>() - 0.5)).collect();
        qp.add_inequality(&coeffs, -0.2 - rng.gen::<f64>(), 0.2 + rng.gen::<f64>());
    }
    for j in 0..n {
        qp.add_bound(j, -1.0, 1.0);
    }
    qp
}

#[test]
fn random_psd_qp_meets_kkt_tolerance() {
    for seed in 0..5 {
        let qp = random_qp(seed, 20);
        let sol = solve_qp(&qp, 1e-8, 20_000).unwrap();
        assert_eq!(sol.report.status, QpStatus::Optimal, "seed {seed}");
        let r = kkt_residuals(&qp, &sol.x, &sol.y);
        for v in r {
            assert!(v <= 1e-8, "seed {seed}: residuals {r:?}");
        }
        assert!(sol.report.primal_residual >= 0.0 && sol.report.dual_residual >= 0.0);
    }
}

#[test]
fn infeasible_equalities_are_reported() {
    let mut qp = QuadraticProgram::new(2);
    qp.add_hessian(0, 0, 1.0);
    qp.add_equality(&[(0, 1.0), (1, 1.0)], 1.0);
    qp.add_equality(&[(0, 1.0), (1, 1.0)], 2.0);
    let sol = solve_qp(&qp, 1e-8, 20_000).unwrap();
    assert_eq!(sol.report.status, QpStatus::Infeasible);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn linear_cost_scaling(q0 in -2.0..2.0f64, q1 in -2.0..2.0f64, c in 0.1..10.0f64) {
        prop_assume!(q0.abs() > 1e-3 && q1.abs() > 1e-3);
        let mut qp = QuadraticProgram::new(2);
        qp.q = vec![q0, q1];
        qp.add_bound(0, -1.0, 2.0);
        qp.add_bound(1, -3.0, 0.5);
        qp.add_inequality(&[(0, 1.0), (1, 1.0)], -2.0, 2.0);
        let base = solve_qp(&qp, 1e-8, 20_000).unwrap();
        qp.q = vec![c * q0, c * q1];
        let scaled = solve_qp(&qp, 1e-8, 20_000).unwrap();
        prop_assert_eq!(base.report.status, QpStatus::Optimal);
        prop_assert_eq!(scaled.report.status, QpStatus::Optimal);
        let tol = 1e-7 * (1.0 + c);
        prop_assert!((scaled.report.objective - c * base.report.objective).abs() < tol);
        // the argmin of the scaled problem is optimal for the original one
        let at_scaled = q0 * scaled.x[0] + q1 * scaled.x[1];
        prop_assert!((at_scaled - base.report.objective).abs() < 1e-7);
    }

    #[test]
    fn repeated_solves_are_bit_identical(seed in 0u64..1000) {
        let qp = random_qp(seed, 8);
        let a = solve_qp(&qp, 1e-8, 20_000).unwrap();
        let b = solve_qp(&qp, 1e-8, 20_000).unwrap();
        prop_assert_eq!(a.report, b.report);
        prop_assert_eq!(a.x, b.x);
    }
}
