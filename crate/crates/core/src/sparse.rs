//! Sparse storage and a fill-reducing LDLᵀ factorization for symmetric
//! positive definite systems.
//!
//! [`CsrMatrix`] holds design matrices (one row per observation) and
//! [`SymmetricMatrix`] holds precision matrices with both triangles stored in
//! compressed-column form. [`LdlFactor`] is an up-looking LDLᵀ factorization
//! applied after a minimum-degree permutation; it is immutable once built, so a
//! single factor can serve concurrent solves.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use thiserror::Error;

const NONE: usize = usize::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FactorError {
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("sparsity pattern does not match the symbolic analysis")]
    PatternMismatch,
}

/// Row-compressed sparse matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed.
    /// Explicit zeros are kept so the pattern stays stable.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
        for &(r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            rows[r].push((c, v));
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut last = NONE;
            for (c, v) in row {
                if c == last {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                    last = c;
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self { nrows, ncols, row_ptr, col_idx, values }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    /// `A x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.ncols);
        (0..self.nrows).map(|i| self.row_dot(i, x)).collect()
    }

    /// `A_i x` for a single row.
    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        let (cols, vals) = self.row(i);
        cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum()
    }

    /// `Aᵀ y`
    pub fn transpose_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.nrows);
        let mut out = vec![0.0; self.ncols];
        for (i, &yi) in y.iter().enumerate() {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                out[c] += v * yi;
            }
        }
        out
    }

    /// Dense copy of row `i`.
    pub fn row_dense(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        let (cols, vals) = self.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            out[c] = v;
        }
        out
    }

    /// Keeps the columns for which `map[c]` is `Some(new_index)`.
    pub fn select_columns(&self, map: &[Option<usize>], new_ncols: usize) -> Self {
        let mut triplets = Vec::new();
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                if let Some(nc) = map[c] {
                    triplets.push((i, nc, v));
                }
            }
        }
        Self::from_triplets(self.nrows, new_ncols, &triplets)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                m[(i, c)] += v;
            }
        }
        m
    }
}

/// Symmetric matrix with both triangles stored column-compressed.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SymmetricMatrix {
    /// Builds from entries of one triangle (either `(i, j)` or `(j, i)`; each
    /// off-diagonal entry is mirrored). Duplicates are summed and explicit
    /// zeros kept.
    pub fn from_triplets(n: usize, entries: &[(usize, usize, f64)]) -> Self {
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, v) in entries {
            assert!(i < n && j < n, "entry ({i}, {j}) out of bounds");
            cols[j].push((i, v));
            if i != j {
                cols[i].push((j, v));
            }
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        for mut col in cols {
            col.sort_by_key(|&(r, _)| r);
            let mut last = NONE;
            for (r, v) in col {
                if r == last {
                    *values.last_mut().unwrap() += v;
                } else {
                    row_idx.push(r);
                    values.push(v);
                    last = r;
                }
            }
            col_ptr.push(row_idx.len());
        }
        Self { n, col_ptr, row_idx, values }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn column(&self, j: usize) -> (&[usize], &[f64]) {
        let span = self.col_ptr[j]..self.col_ptr[j + 1];
        (&self.row_idx[span.clone()], &self.values[span])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (rows, vals) = self.column(j);
        match rows.binary_search(&i) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.get(j, j)).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn same_pattern(&self, other: &Self) -> bool {
        self.n == other.n && self.col_ptr == other.col_ptr && self.row_idx == other.row_idx
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for j in 0..self.n {
            let (rows, vals) = self.column(j);
            for (&r, &v) in rows.iter().zip(vals) {
                out[r] += v * x[j];
            }
        }
        out
    }

    /// `xᵀ M x`
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// Principal submatrix over `keep` (in the given order).
    pub fn principal_submatrix(&self, keep: &[usize]) -> Self {
        let mut map = vec![NONE; self.n];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let mut entries = Vec::new();
        for (new_j, &old_j) in keep.iter().enumerate() {
            let (rows, vals) = self.column(old_j);
            for (&r, &v) in rows.iter().zip(vals) {
                let new_i = map[r];
                if new_i != NONE && new_i <= new_j {
                    entries.push((new_i, new_j, v));
                }
            }
        }
        Self::from_triplets(keep.len(), &entries)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for j in 0..self.n {
            let (rows, vals) = self.column(j);
            for (&r, &v) in rows.iter().zip(vals) {
                m[(r, j)] = v;
            }
        }
        m
    }
}

/// Minimum-degree ordering on the explicit elimination graph.
///
/// Ties are broken by the smaller node index, so the ordering is a pure
/// function of the pattern.
pub fn minimum_degree_ordering(mat: &SymmetricMatrix) -> Vec<usize> {
    let n = mat.dim();
    let mut adj: Vec<BTreeSet<usize>> =
        (0..n).map(|j| mat.column(j).0.iter().copied().filter(|&r| r != j).collect()).collect();
    let mut eliminated = vec![false; n];
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> = (0..n).map(|j| Reverse((adj[j].len(), j))).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse((deg, v))) = heap.pop() {
        if eliminated[v] || deg != adj[v].len() {
            continue;
        }
        eliminated[v] = true;
        order.push(v);
        let nbrs: Vec<usize> = std::mem::take(&mut adj[v]).into_iter().collect();
        for &a in &nbrs {
            adj[a].remove(&v);
        }
        for (ia, &a) in nbrs.iter().enumerate() {
            for &b in &nbrs[ia + 1..] {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
        for &a in &nbrs {
            heap.push(Reverse((adj[a].len(), a)));
        }
    }
    order
}

/// Ordering and elimination-tree data reusable across matrices that share a
/// sparsity pattern.
#[derive(Debug, Clone)]
pub struct SymbolicLdl {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    perm: Vec<usize>,
    pinv: Vec<usize>,
    parent: Vec<usize>,
    l_ptr: Vec<usize>,
}

impl SymbolicLdl {
    pub fn analyze(mat: &SymmetricMatrix) -> Self {
        let n = mat.dim();
        let perm = minimum_degree_ordering(mat);
        let mut pinv = vec![0; n];
        for (k, &p) in perm.iter().enumerate() {
            pinv[p] = k;
        }
        let mut parent = vec![NONE; n];
        let mut flag = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            let (rows, _) = mat.column(perm[k]);
            for &r in rows {
                let mut i = pinv[r];
                if i < k {
                    while flag[i] != k {
                        if parent[i] == NONE {
                            parent[i] = k;
                        }
                        lnz[i] += 1;
                        flag[i] = k;
                        i = parent[i];
                    }
                }
            }
        }
        let mut l_ptr = vec![0; n + 1];
        for k in 0..n {
            l_ptr[k + 1] = l_ptr[k] + lnz[k];
        }
        Self { n, col_ptr: mat.col_ptr.clone(), row_idx: mat.row_idx.clone(), perm, pinv, parent, l_ptr }
    }

    pub fn factor_nnz(&self) -> usize {
        self.l_ptr[self.n]
    }

    /// Numeric factorization of a matrix with the analyzed pattern.
    pub fn factorize(&self, mat: &SymmetricMatrix) -> Result<LdlFactor, FactorError> {
        if mat.n != self.n || mat.col_ptr != self.col_ptr || mat.row_idx != self.row_idx {
            return Err(FactorError::PatternMismatch);
        }
        let n = self.n;
        let nnz = self.factor_nnz();
        let mut li = vec![0usize; nnz];
        let mut lx = vec![0.0; nnz];
        let mut d = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut pattern = vec![0usize; n];
        let mut flag = vec![NONE; n];
        let mut lnz = vec![0usize; n];

        let max_diag = mat.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let pivot_floor = 1e-14 * max_diag.max(f64::MIN_POSITIVE);

        for k in 0..n {
            y[k] = 0.0;
            let mut top = n;
            flag[k] = k;
            let (rows, vals) = mat.column(self.perm[k]);
            for (&r, &v) in rows.iter().zip(vals) {
                let mut i = self.pinv[r];
                if i <= k {
                    y[i] += v;
                    let mut len = 0;
                    while flag[i] != k {
                        pattern[len] = i;
                        len += 1;
                        flag[i] = k;
                        i = self.parent[i];
                    }
                    while len > 0 {
                        top -= 1;
                        len -= 1;
                        pattern[top] = pattern[len];
                    }
                }
            }
            d[k] = y[k];
            y[k] = 0.0;
            while top < n {
                let i = pattern[top];
                let yi = y[i];
                y[i] = 0.0;
                let p2 = self.l_ptr[i] + lnz[i];
                for p in self.l_ptr[i]..p2 {
                    y[li[p]] -= lx[p] * yi;
                }
                let l_ki = yi / d[i];
                d[k] -= l_ki * yi;
                li[p2] = k;
                lx[p2] = l_ki;
                lnz[i] += 1;
                top += 1;
            }
            if !(d[k] > pivot_floor) {
                return Err(FactorError::NotPositiveDefinite { pivot: self.perm[k], value: d[k] });
            }
        }
        Ok(LdlFactor { n, perm: self.perm.clone(), l_ptr: self.l_ptr.clone(), li, lx, d })
    }
}

/// `P M Pᵀ = L D Lᵀ` with unit lower-triangular `L`.
#[derive(Debug, Clone)]
pub struct LdlFactor {
    n: usize,
    perm: Vec<usize>,
    l_ptr: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
}

impl LdlFactor {
    /// Analyzes and factorizes in one go.
    pub fn new(mat: &SymmetricMatrix) -> Result<Self, FactorError> {
        SymbolicLdl::analyze(mat).factorize(mat)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `log det M`
    pub fn log_det(&self) -> f64 {
        self.d.iter().map(|d| d.ln()).sum()
    }

    /// Solves `M x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for j in 0..self.n {
            let xj = x[j];
            for p in self.l_ptr[j]..self.l_ptr[j + 1] {
                x[self.li[p]] -= self.lx[p] * xj;
            }
        }
        for (xj, dj) in x.iter_mut().zip(&self.d) {
            *xj /= dj;
        }
        for j in (0..self.n).rev() {
            let mut xj = x[j];
            for p in self.l_ptr[j]..self.l_ptr[j + 1] {
                xj -= self.lx[p] * x[self.li[p]];
            }
            x[j] = xj;
        }
        let mut out = vec![0.0; self.n];
        for (k, &p) in self.perm.iter().enumerate() {
            out[p] = x[k];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};

    fn random_spd(n: usize, seed: u64) -> SymmetricMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut entries = Vec::new();
        let mut diag = vec![1.0; n];
        for j in 0..n {
            for i in 0..j {
                if rng.random::<f64>() < 0.2 {
                    let v: f64 = rng.random_range(-1.0..1.0);
                    entries.push((i, j, v));
                    diag[i] += v.abs();
                    diag[j] += v.abs();
                }
            }
        }
        for (j, d) in diag.into_iter().enumerate() {
            entries.push((j, j, d));
        }
        SymmetricMatrix::from_triplets(n, &entries)
    }

    #[test]
    fn solve_matches_dense() {
        for seed in 0..5 {
            let m = random_spd(30, seed);
            let f = LdlFactor::new(&m).unwrap();
            let b: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
            let x = f.solve(&b);
            let dense = m.to_dense();
            let expected = dense.clone().cholesky().unwrap().solve(&DVector::from_vec(b));
            for i in 0..30 {
                assert!((x[i] - expected[i]).abs() < 1e-12);
            }
            let ld = dense.cholesky().unwrap().l().diagonal().map(|v| v.ln()).sum() * 2.0;
            assert!((f.log_det() - ld).abs() < 1e-10);
        }
    }

    #[test]
    fn arrowhead_ordering_has_no_fill() {
        // node 0 couples to every other node; the path 1..n is tridiagonal
        let n = 50;
        let mut entries = vec![(0, 0, 100.0)];
        for i in 1..n {
            entries.push((i, i, 4.0));
            entries.push((0, i, 1.0));
            if i + 1 < n {
                entries.push((i, i + 1, -1.0));
            }
        }
        let m = SymmetricMatrix::from_triplets(n, &entries);
        let sym = SymbolicLdl::analyze(&m);
        assert!(sym.factor_nnz() <= (m.nnz() - n) / 2);
    }

    #[test]
    fn singular_matrix_is_rejected() {
        // first-difference precision on 3 nodes has the constant null space
        let m = SymmetricMatrix::from_triplets(3, &[(0, 0, 1.0), (0, 1, -1.0), (1, 1, 2.0), (1, 2, -1.0), (2, 2, 1.0)]);
        assert!(matches!(LdlFactor::new(&m), Err(FactorError::NotPositiveDefinite { .. })));
    }

    #[test]
    fn triplet_duplicates_are_summed() {
        let a = CsrMatrix::from_triplets(2, 3, &[(0, 1, 1.0), (0, 1, 2.0), (1, 0, 0.0)]);
        assert_eq!(a.row(0), (&[1usize][..], &[3.0][..]));
        assert_eq!(a.nnz(), 2);
        let dense = a.to_dense();
        assert_eq!(dense, DMatrix::from_row_slice(2, 3, &[0.0, 3.0, 0.0, 0.0, 0.0, 0.0]));
        assert_eq!(a.transpose_mul_vec(&[1.0, 1.0]), vec![0.0, 3.0, 0.0]);
    }

    #[test]
    fn principal_submatrix_keeps_entries() {
        let m = random_spd(10, 7);
        let keep = [2, 5, 7];
        let sub = m.principal_submatrix(&keep);
        for (a, &i) in keep.iter().enumerate() {
            for (b, &j) in keep.iter().enumerate() {
                assert_eq!(sub.get(a, b), m.get(i, j));
            }
        }
    }
}
