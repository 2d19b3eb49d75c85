//! Sparse LDLᵀ for quasi-definite matrices with a cached symbolic analysis.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use super::csc::CscMatrix;

const NONE: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum LdlError {
    #[error("matrix must be square and store only its upper triangle")]
    NotUpperTriangular,
    #[error("column {0} has no stored diagonal entry")]
    MissingDiagonal(usize),
    #[error("zero pivot at column {0}")]
    ZeroPivot(usize),
    #[error("value array length does not match the factored pattern")]
    PatternMismatch,
}

/// Minimum-degree ordering of the symmetric pattern stored in `upper`.
///
/// Ties go to the lowest index, so the ordering is deterministic.
pub fn min_degree_order(upper: &CscMatrix) -> Vec<usize> {
    let n = upper.ncols;
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for (r, c, _) in upper.iter() {
        if r != c {
            adj[r].insert(c);
            adj[c].insert(r);
        }
    }
    let mut done = vec![false; n];
    let mut perm = Vec::with_capacity(n);
    for _ in 0..n {
        let v = (0..n)
            .filter(|&i| !done[i])
            .min_by_key(|&i| (adj[i].len(), i))
            .unwrap();
        done[v] = true;
        perm.push(v);
        let nbrs: Vec<usize> = core::mem::take(&mut adj[v]).into_iter().collect();
        for &a in &nbrs {
            adj[a].remove(&v);
        }
        for (i, &a) in nbrs.iter().enumerate() {
            for &b in &nbrs[i + 1..] {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
    }
    perm
}

/// LDLᵀ factorization `P K Pᵀ = L D Lᵀ` of a symmetric matrix given by its
/// upper triangle.
#[derive(Debug, Clone)]
pub struct Ldl {
    n: usize,
    perm: Vec<usize>,
    /// Permuted upper-triangular pattern.
    a: CscMatrix,
    /// Position in `a.values` of each stored entry of the input.
    map: Vec<usize>,
    etree: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    dinv: Vec<f64>,
    work: Vec<f64>,
}

impl Ldl {
    /// Symbolic and numeric factorization with a minimum-degree ordering.
    pub fn new(upper: &CscMatrix) -> Result<Self, LdlError> {
        let perm = min_degree_order(upper);
        Self::with_ordering(upper, perm)
    }

    pub fn with_ordering(upper: &CscMatrix, perm: Vec<usize>) -> Result<Self, LdlError> {
        let n = upper.ncols;
        if upper.nrows != n || !upper.is_upper_triangular() {
            return Err(LdlError::NotUpperTriangular);
        }
        let mut iperm = vec![0; n];
        for (i, &p) in perm.iter().enumerate() {
            iperm[p] = i;
        }
        let mut entries: Vec<(usize, usize, usize)> = upper
            .iter()
            .enumerate()
            .map(|(k, (r, c, _))| {
                let (pr, pc) = (iperm[r], iperm[c]);
                (pr.max(pc), pr.min(pc), k)
            })
            .collect();
        entries.sort_unstable();
        let mut col_ptr = vec![0; n + 1];
        let mut row_idx = Vec::with_capacity(entries.len());
        let mut map = vec![0; entries.len()];
        for (pos, &(c, r, k)) in entries.iter().enumerate() {
            col_ptr[c + 1] += 1;
            row_idx.push(r);
            map[k] = pos;
        }
        for c in 0..n {
            col_ptr[c + 1] += col_ptr[c];
        }
        for c in 0..n {
            let last = col_ptr[c + 1];
            if last == col_ptr[c] || row_idx[last - 1] != c {
                return Err(LdlError::MissingDiagonal(perm[c]));
            }
        }
        let a = CscMatrix {
            nrows: n,
            ncols: n,
            col_ptr,
            row_idx,
            values: vec![0.0; entries.len()],
        };

        // Elimination tree and column counts.
        let mut etree = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut flag = vec![NONE; n];
        for j in 0..n {
            flag[j] = j;
            for p in a.col_ptr[j]..a.col_ptr[j + 1] {
                let mut i = a.row_idx[p];
                while i < j && flag[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    flag[i] = j;
                    i = etree[i];
                }
            }
        }
        let mut lp = vec![0; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + lnz[i];
        }
        let nnz_l = lp[n];
        let mut f = Self {
            n,
            perm,
            a,
            map,
            etree,
            lp,
            li: vec![0; nnz_l],
            lx: vec![0.0; nnz_l],
            d: vec![0.0; n],
            dinv: vec![0.0; n],
            work: vec![0.0; n],
        };
        f.refactor(&upper.values)?;
        Ok(f)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Numeric refactorization for new values on the original pattern.
    pub fn refactor(&mut self, values: &[f64]) -> Result<(), LdlError> {
        if values.len() != self.map.len() {
            return Err(LdlError::PatternMismatch);
        }
        for (k, &v) in values.iter().enumerate() {
            self.a.values[self.map[k]] = v;
        }
        self.numeric()
    }

    fn numeric(&mut self) -> Result<(), LdlError> {
        let n = self.n;
        let mut y_used = vec![false; n];
        let mut y_vals = vec![0.0; n];
        let mut y_idx = vec![0usize; n];
        let mut elim = vec![0usize; n];
        let mut next_space: Vec<usize> = self.lp[..n].to_vec();
        for k in 0..n {
            let mut nnz_y = 0;
            self.d[k] = 0.0;
            for p in self.a.col_ptr[k]..self.a.col_ptr[k + 1] {
                let b = self.a.row_idx[p];
                if b == k {
                    self.d[k] = self.a.values[p];
                    continue;
                }
                y_vals[b] = self.a.values[p];
                if !y_used[b] {
                    y_used[b] = true;
                    elim[0] = b;
                    let mut ne = 1;
                    let mut next = self.etree[b];
                    while next != NONE && next < k {
                        if y_used[next] {
                            break;
                        }
                        y_used[next] = true;
                        elim[ne] = next;
                        ne += 1;
                        next = self.etree[next];
                    }
                    while ne > 0 {
                        ne -= 1;
                        y_idx[nnz_y] = elim[ne];
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
                self.lx[end] = yc * self.dinv[c];
                self.d[k] -= yc * self.lx[end];
                next_space[c] += 1;
                y_vals[c] = 0.0;
                y_used[c] = false;
            }
            if self.d[k] == 0.0 || !self.d[k].is_finite() {
                return Err(LdlError::ZeroPivot(self.perm[k]));
            }
            self.dinv[k] = 1.0 / self.d[k];
        }
        Ok(())
    }

    /// Number of positive pivots (the inertia's positive count).
    pub fn positive_pivots(&self) -> usize {
        self.d.iter().filter(|&&d| d > 0.0).count()
    }

    /// Solve `K x = b`, overwriting `b` with `x`.
    pub fn solve_in_place(&mut self, b: &mut [f64]) {
        let x = &mut self.work;
        for i in 0..self.n {
            x[i] = b[self.perm[i]];
        }
        for i in 0..self.n {
            let xi = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                x[self.li[j]] -= self.lx[j] * xi;
            }
        }
        for i in 0..self.n {
            x[i] *= self.dinv[i];
        }
        for i in (0..self.n).rev() {
            let mut acc = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                acc -= self.lx[j] * x[self.li[j]];
            }
            x[i] = acc;
        }
        for i in 0..self.n {
            b[self.perm[i]] = x[i];
        }
    }
}
