//! Sparse symmetric `L D L^T` factorization without pivoting, for
//! quasidefinite KKT matrices.
//!
//! The sparsity pattern is fixed once from a list of `(row, col)` entries and
//! a caller-supplied elimination order; numeric refactorizations only scatter
//! new values into the precomputed slots. The column-wise up-looking
//! factorization follows the elimination-tree scheme of QDLDL.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LdlError {
    #[error("zero pivot at elimination step {0}")]
    ZeroPivot(usize),
    #[error("non-finite pivot at elimination step {0}")]
    NonFinite(usize),
}

const NONE: usize = usize::MAX;

/// Symmetric matrix product for a triplet list holding each off-diagonal
/// pair once (either triangle). Duplicate entries are summed.
pub fn symmetric_mul(entries: &[(usize, usize)], values: &[f64], x: &[f64], y: &mut [f64]) {
    y.iter_mut().for_each(|v| *v = 0.0);
    for (&(i, j), &v) in entries.iter().zip(values) {
        y[i] += v * x[j];
        if i != j {
            y[j] += v * x[i];
        }
    }
}

#[derive(Debug, Clone)]
pub struct SparseLdl {
    n: usize,
    /// `perm[new] = old`.
    perm: Vec<usize>,
    /// Upper-triangular CSC of the permuted matrix.
    ap: Vec<usize>,
    ai: Vec<usize>,
    ax: Vec<f64>,
    /// Destination of each input entry in `ax`.
    slots: Vec<usize>,
    etree: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    dinv: Vec<f64>,
    positive_pivots: usize,
    work: Vec<f64>,
}

impl SparseLdl {
    /// `entries` are `(row, col)` positions in original numbering; `order`
    /// lists original indices in elimination order. Diagonal slots are
    /// always present.
    pub fn new(n: usize, entries: &[(usize, usize)], order: &[usize]) -> Self {
        assert_eq!(order.len(), n, "ordering must be a permutation");
        let mut iperm = vec![NONE; n];
        for (new, &old) in order.iter().enumerate() {
            assert!(iperm[old] == NONE, "ordering repeats index {old}");
            iperm[old] = new;
        }

        // Map every entry to an upper-triangular (row <= col) position.
        let mapped: Vec<(usize, usize)> = entries
            .iter()
            .map(|&(i, j)| {
                let (a, b) = (iperm[i], iperm[j]);
                if a <= b { (a, b) } else { (b, a) }
            })
            .collect();
        let mut keys: Vec<(usize, usize)> = mapped.clone();
        keys.extend((0..n).map(|k| (k, k)));
        keys.sort_unstable_by_key(|&(r, c)| (c, r));
        keys.dedup();

        let mut ap = vec![0usize; n + 1];
        let mut ai = Vec::with_capacity(keys.len());
        for &(r, c) in &keys {
            ap[c + 1] += 1;
            ai.push(r);
        }
        for c in 0..n {
            ap[c + 1] += ap[c];
        }
        let slots = mapped
            .iter()
            .map(|&(r, c)| {
                let col = &ai[ap[c]..ap[c + 1]];
                ap[c] + col.binary_search(&r).expect("entry present in pattern")
            })
            .collect();

        // Elimination tree and column counts of L.
        let mut etree = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut flag = vec![NONE; n];
        for j in 0..n {
            flag[j] = j;
            for &row in &ai[ap[j]..ap[j + 1]] {
                let mut i = row;
                while i != j && flag[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    flag[i] = j;
                    i = etree[i];
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + lnz[i];
        }
        let nnz_l = lp[n];
        let nnz_a = ai.len();
        Self {
            n,
            perm: order.to_vec(),
            ap,
            ai,
            ax: vec![0.0; nnz_a],
            slots,
            etree,
            lp,
            li: vec![0; nnz_l],
            lx: vec![0.0; nnz_l],
            d: vec![0.0; n],
            dinv: vec![0.0; n],
            positive_pivots: 0,
            work: vec![0.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn factor_nnz(&self) -> usize {
        self.lp[self.n]
    }

    /// Number of positive entries of `D` from the last successful factorization.
    pub fn positive_pivots(&self) -> usize {
        self.positive_pivots
    }

    /// Numeric factorization for values aligned with the constructor entries.
    pub fn factor(&mut self, values: &[f64]) -> Result<(), LdlError> {
        assert_eq!(values.len(), self.slots.len());
        self.ax.iter_mut().for_each(|v| *v = 0.0);
        for (&s, &v) in self.slots.iter().zip(values) {
            self.ax[s] += v;
        }

        let n = self.n;
        let mut y_vals = vec![0.0; n];
        let mut y_used = vec![false; n];
        let mut y_idx = vec![0usize; n];
        let mut elim = vec![0usize; n];
        let mut next_space: Vec<usize> = self.lp[..n].to_vec();
        self.positive_pivots = 0;

        for k in 0..n {
            let mut nnz_y = 0;
            self.d[k] = 0.0;
            for p in self.ap[k]..self.ap[k + 1] {
                let b = self.ai[p];
                if b == k {
                    self.d[k] = self.ax[p];
                    continue;
                }
                y_vals[b] = self.ax[p];
                if !y_used[b] {
                    y_used[b] = true;
                    elim[0] = b;
                    let mut n_elim = 1;
                    let mut next = self.etree[b];
                    while next != NONE && next < k {
                        if y_used[next] {
                            break;
                        }
                        y_used[next] = true;
                        elim[n_elim] = next;
                        n_elim += 1;
                        next = self.etree[next];
                    }
                    while n_elim > 0 {
                        n_elim -= 1;
                        y_idx[nnz_y] = elim[n_elim];
                        nnz_y += 1;
                    }
                }
            }
            for i in (0..nnz_y).rev() {
                let c = y_idx[i];
                let end = next_space[c];
                let yc = y_vals[c];
                for j in self.lp[c]..end {
                    y_vals[self.li[j]] -= self.lx[j] * yc;
                }
                self.li[end] = k;
                let l = yc * self.dinv[c];
                self.lx[end] = l;
                self.d[k] -= yc * l;
                next_space[c] += 1;
                y_vals[c] = 0.0;
                y_used[c] = false;
            }
            if !self.d[k].is_finite() {
                return Err(LdlError::NonFinite(k));
            }
            if self.d[k] == 0.0 {
                return Err(LdlError::ZeroPivot(k));
            }
            if self.d[k] > 0.0 {
                self.positive_pivots += 1;
            }
            self.dinv[k] = 1.0 / self.d[k];
        }
        Ok(())
    }

    /// Solves in place, `rhs` in original numbering.
    pub fn solve(&mut self, rhs: &mut [f64]) {
        let n = self.n;
        let x = &mut self.work;
        for k in 0..n {
            x[k] = rhs[self.perm[k]];
        }
        for i in 0..n {
            let xi = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                x[self.li[j]] -= self.lx[j] * xi;
            }
        }
        for i in 0..n {
            x[i] *= self.dinv[i];
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                acc -= self.lx[j] * x[self.li[j]];
            }
            x[i] = acc;
        }
        for k in 0..n {
            rhs[self.perm[k]] = x[k];
        }
    }
}

/// Default elimination order for a KKT system: the variables in their
/// natural order, each constraint row placed right after the last variable
/// it touches. Rows without variables go last.
pub fn constraints_after_variables(
    num_vars: usize,
    num_rows: usize,
    jacobian: &[(usize, usize)],
) -> Vec<usize> {
    let mut last_var = vec![None::<usize>; num_rows];
    for &(r, c) in jacobian {
        last_var[r] = Some(last_var[r].map_or(c, |v: usize| v.max(c)));
    }
    let mut keyed: Vec<(usize, usize, usize)> = (0..num_vars).map(|v| (2 * v, 0, v)).collect();
    keyed.extend((0..num_rows).map(|r| {
        let key = last_var[r].map_or(usize::MAX, |v| 2 * v + 1);
        (key, 1, num_vars + r)
    }));
    keyed.sort_unstable();
    keyed.into_iter().map(|(_, _, i)| i).collect()
}
