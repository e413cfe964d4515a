//! Minimal sparse matrix support: a canonical CSR type for assembly and
//! structural comparison, plus a direct solver backed by the CSparse port
//! `rsparse` (AMD ordering, LU with partial pivoting).
//!
//! The CSR representation is canonical: per row the column indices are
//! strictly increasing, duplicate triplets have been summed, and exact zeros
//! are pruned. Two matrices assembled through different code paths therefore
//! have byte-comparable structure, which the matrix equivalence tests rely
//! on.

use crate::error::{Error, Result};

/// Compressed sparse row matrix with canonical structure.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Triplet accumulator; `build` produces a canonical [`CsrMatrix`].
#[derive(Debug, Clone)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        TripletBuilder {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    /// Accumulate `value` at `(row, col)`. Duplicates are summed by `build`.
    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.entries.push((row, col, value));
    }

    pub fn build(mut self) -> CsrMatrix {
        self.entries
            .sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; self.nrows + 1];
        let mut col_idx = Vec::with_capacity(self.entries.len());
        let mut values = Vec::with_capacity(self.entries.len());
        let mut iter = self.entries.into_iter().peekable();
        while let Some((r, c, mut v)) = iter.next() {
            while let Some(&(r2, c2, v2)) = iter.peek() {
                if r2 == r && c2 == c {
                    v += v2;
                    iter.next();
                } else {
                    break;
                }
            }
            if v != 0.0 {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
            }
        }
        for r in 0..self.nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr,
            col_idx,
            values,
        }
    }
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CsrMatrix {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut b = TripletBuilder::new(nrows, ncols);
        for &(r, c, v) in triplets {
            b.push(r, c, v);
        }
        b.build()
    }

    /// Diagonal matrix from a dense vector; zeros are pruned.
    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut b = TripletBuilder::new(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            b.push(i, i, v);
        }
        b.build()
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

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut b = TripletBuilder::new(self.ncols, self.nrows);
        for (r, c, v) in self.iter() {
            b.push(c, r, v);
        }
        b.build()
    }

    /// `self * other`, used by structural tests; not performance critical.
    pub fn matmul(&self, other: &CsrMatrix) -> Result<CsrMatrix> {
        if self.ncols != other.nrows {
            return Err(Error::Shape {
                expected: self.ncols,
                got: other.nrows,
            });
        }
        let mut b = TripletBuilder::new(self.nrows, other.ncols);
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&k, &v) in cols.iter().zip(vals) {
                let (ocols, ovals) = other.row(k);
                for (&c, &ov) in ocols.iter().zip(ovals) {
                    b.push(r, c, v * ov);
                }
            }
        }
        Ok(b.build())
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.ncols {
            return Err(Error::Shape {
                expected: self.ncols,
                got: x.len(),
            });
        }
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_add(x, 1.0, &mut y)?;
        Ok(y)
    }

    /// `y += scale * A x`.
    pub fn mul_vec_add(&self, x: &[f64], scale: f64, y: &mut [f64]) -> Result<()> {
        if x.len() != self.ncols || y.len() != self.nrows {
            return Err(Error::Shape {
                expected: self.ncols,
                got: x.len(),
            });
        }
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            let mut acc = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                acc += v * x[c];
            }
            y[r] += scale * acc;
        }
        Ok(())
    }

    /// Submatrix over the given row and column index sets, in their order.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> CsrMatrix {
        let mut col_map = vec![usize::MAX; self.ncols];
        for (local, &c) in cols.iter().enumerate() {
            col_map[c] = local;
        }
        let mut b = TripletBuilder::new(rows.len(), cols.len());
        for (local_r, &r) in rows.iter().enumerate() {
            let (rc, rv) = self.row(r);
            for (&c, &v) in rc.iter().zip(rv) {
                if col_map[c] != usize::MAX {
                    b.push(local_r, col_map[c], v);
                }
            }
        }
        b.build()
    }

    /// True when both matrices have identical dimensions and sparsity
    /// pattern (column structure per row), regardless of values.
    pub fn same_pattern(&self, other: &CsrMatrix) -> bool {
        self.nrows == other.nrows
            && self.ncols == other.ncols
            && self.row_ptr == other.row_ptr
            && self.col_idx == other.col_idx
    }

    /// Largest entrywise deviation `|a - b|` relative to the largest entry
    /// magnitude of `self`. Requires an identical pattern.
    pub fn max_rel_deviation(&self, other: &CsrMatrix) -> Option<f64> {
        if !self.same_pattern(other) {
            return None;
        }
        let scale = self
            .values
            .iter()
            .fold(0.0f64, |m, &v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        let dev = self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0f64, |m, (&a, &b)| m.max((a - b).abs()));
        Some(dev / scale)
    }

    /// Entrywise scaling by a non-zero factor (pattern is preserved).
    pub fn scaled(&self, factor: f64) -> CsrMatrix {
        debug_assert!(factor != 0.0);
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= factor;
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, c, v) in self.iter() {
            d[r][c] = v;
        }
        d
    }

    /// Solve `A x = b` by sparse LU with AMD ordering and partial pivoting.
    pub fn lu_solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if self.nrows != self.ncols {
            return Err(Error::SingularSystem(format!(
                "matrix is {}x{}, not square",
                self.nrows, self.ncols
            )));
        }
        if b.len() != self.nrows {
            return Err(Error::Shape {
                expected: self.nrows,
                got: b.len(),
            });
        }
        // rsparse wants CSC; the CSC arrays of A are the CSR arrays of A^T.
        let at = self.transpose();
        let a = rsparse::data::Sprs {
            nzmax: at.values.len(),
            m: self.nrows,
            n: self.ncols,
            p: at.row_ptr.iter().map(|&p| p as isize).collect(),
            i: at.col_idx.clone(),
            x: at.values.clone(),
        };
        let mut x = b.to_vec();
        rsparse::lusol(&a, &mut x, 1, 1.0)
            .map_err(|e| Error::SingularSystem(format!("sparse LU failed: {e}")))?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem(
                "solution contains non-finite entries".into(),
            ));
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_sums_duplicates_prunes_zeros_and_sorts() {
        let m = CsrMatrix::from_triplets(
            2,
            3,
            &[
                (0, 2, 1.0),
                (0, 0, 2.0),
                (0, 2, -1.0),
                (1, 1, 4.0),
                (1, 0, 0.0),
            ],
        );
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(0, 0), 2.0);
        assert_eq!(m.get(0, 2), 0.0);
        assert_eq!(m.get(1, 1), 4.0);
        let (cols, _) = m.row(0);
        assert_eq!(cols, &[0]);
    }

    #[test]
    fn transpose_round_trip() {
        let m = CsrMatrix::from_triplets(3, 2, &[(0, 1, 5.0), (2, 0, -3.0), (1, 1, 2.0)]);
        let t = m.transpose();
        assert_eq!(t.nrows(), 2);
        assert_eq!(t.get(1, 0), 5.0);
        assert_eq!(t.get(0, 2), -3.0);
        assert_eq!(t.transpose(), m);
    }

    #[test]
    fn matmul_matches_dense_oracle() {
        let a = CsrMatrix::from_triplets(2, 3, &[(0, 0, 1.0), (0, 2, 2.0), (1, 1, 3.0)]);
        let b = CsrMatrix::from_triplets(3, 2, &[(0, 0, 4.0), (2, 1, 5.0), (1, 0, 6.0)]);
        let c = a.matmul(&b).unwrap();
        let ad = a.to_dense();
        let bd = b.to_dense();
        for r in 0..2 {
            for col in 0..2 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += ad[r][k] * bd[k][col];
                }
                assert_eq!(c.get(r, col), acc);
            }
        }
    }

    #[test]
    fn pattern_comparison_ignores_values() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 2.0)]);
        let b = CsrMatrix::from_triplets(2, 2, &[(0, 0, 7.0), (1, 1, -2.0)]);
        let c = CsrMatrix::from_triplets(2, 2, &[(0, 1, 7.0), (1, 1, -2.0)]);
        assert!(a.same_pattern(&b));
        assert!(!a.same_pattern(&c));
        let dev = a.max_rel_deviation(&b).unwrap();
        assert!(dev > 0.0);
        assert_eq!(a.max_rel_deviation(&c), None);
    }

    #[test]
    fn submatrix_extracts_requested_block() {
        let a = CsrMatrix::from_triplets(
            3,
            3,
            &[(0, 0, 1.0), (0, 2, 2.0), (1, 1, 3.0), (2, 0, 4.0), (2, 2, 5.0)],
        );
        let s = a.submatrix(&[0, 2], &[0, 2]);
        assert_eq!(s.nrows(), 2);
        assert_eq!(s.get(0, 0), 1.0);
        assert_eq!(s.get(0, 1), 2.0);
        assert_eq!(s.get(1, 0), 4.0);
        assert_eq!(s.get(1, 1), 5.0);
    }

    #[test]
    fn lu_solves_small_dense_oracle() {
        // 3x3 system with known solution x = (1, -2, 3).
        let a = CsrMatrix::from_triplets(
            3,
            3,
            &[
                (0, 0, 4.0),
                (0, 1, 1.0),
                (1, 0, 1.0),
                (1, 1, 3.0),
                (1, 2, -1.0),
                (2, 1, -1.0),
                (2, 2, 2.0),
            ],
        );
        let x_true = [1.0, -2.0, 3.0];
        let b = a.mul_vec(&x_true).unwrap();
        let x = a.lu_solve(&b).unwrap();
        for (xi, ti) in x.iter().zip(&x_true) {
            assert!((xi - ti).abs() < 1e-12, "{xi} vs {ti}");
        }
    }

    #[test]
    fn lu_rejects_singular_matrix() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        assert!(a.lu_solve(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn lu_solves_poisson_band_to_tight_tolerance() {
        // 1D Laplacian with Dirichlet ends, solution is exactly linear in
        // the node index for a constant right-hand side of zero with the
        // boundary moved to the right-hand side.
        let n = 50;
        let mut b = TripletBuilder::new(n, n);
        for i in 0..n {
            b.push(i, i, 2.0);
            if i > 0 {
                b.push(i, i - 1, -1.0);
            }
            if i + 1 < n {
                b.push(i, i + 1, -1.0);
            }
        }
        let a = b.build();
        let mut rhs = vec![0.0; n];
        rhs[n - 1] = (n + 1) as f64; // right boundary value n+1, left 0
        let x = a.lu_solve(&rhs).unwrap();
        for (i, xi) in x.iter().enumerate() {
            let exact = (i + 1) as f64;
            assert!((xi - exact).abs() < 1e-10 * exact.max(1.0));
        }
    }
}
