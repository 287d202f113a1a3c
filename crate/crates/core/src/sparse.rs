//! Compressed sparse row storage used for adjacency matrices, graph operators
//! and bag-of-words feature matrices.

use ndarray::{Array2, ArrayView2};

/// Real matrix in compressed sparse row form.
///
/// Column indices within a row are strictly increasing; explicit zeros may be
/// stored.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from `(row, col, value)` triplets. Duplicate coordinates are summed.
    ///
    /// Panics if a coordinate is out of range.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|e| (e.0, e.1));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &sorted {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of range");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indptr[r + 1] += 1;
                indices.push(c);
                values.push(v);
                last = Some((r, c));
            }
        }
        for i in 0..nrows {
            indptr[i + 1] += indptr[i];
        }
        CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn diagonal_matrix(diag: &[f64]) -> Self {
        let n = diag.len();
        CsrMatrix {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: diag.to_vec(),
        }
    }

    pub fn from_dense(dense: &ArrayView2<f64>) -> Self {
        let mut triplets = Vec::new();
        for ((i, j), &v) in dense.indexed_iter() {
            if v != 0.0 {
                triplets.push((i, j, v));
            }
        }
        CsrMatrix::from_triplets(dense.nrows(), dense.ncols(), &triplets)
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
        let range = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[range.clone()], &self.values[range])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows).map(|i| self.row(i).1.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.ncols];
        for (&j, &v) in self.indices.iter().zip(&self.values) {
            sums[j] += v;
        }
        sums
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.ncols + 1];
        for &j in &self.indices {
            counts[j + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let slot = next[j];
                indices[slot] = i;
                values[slot] = v;
                next[j] += 1;
            }
        }
        CsrMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            indptr,
            indices,
            values,
        }
    }

    /// `diag(left) · self · diag(right)`.
    pub fn scale(&self, left: &[f64], right: &[f64]) -> CsrMatrix {
        debug_assert_eq!(left.len(), self.nrows);
        debug_assert_eq!(right.len(), self.ncols);
        let mut out = self.clone();
        for (i, &l) in left.iter().enumerate() {
            for k in self.indptr[i]..self.indptr[i + 1] {
                out.values[k] *= l * right[self.indices[k]];
            }
        }
        out
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> CsrMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = f(*v));
        out
    }

    /// `a·self + b·other`, shapes must agree.
    pub fn linear_combination(&self, a: f64, other: &CsrMatrix, b: f64) -> CsrMatrix {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let triplets: Vec<_> = self
            .triplets()
            .map(|(i, j, v)| (i, j, a * v))
            .chain(other.triplets().map(|(i, j, v)| (i, j, b * v)))
            .collect();
        CsrMatrix::from_triplets(self.nrows, self.ncols, &triplets)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum()
            })
            .collect()
    }

    /// `self · dense`.
    pub fn mul_dense(&self, dense: &ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(dense.nrows(), self.ncols, "sparse-dense shape mismatch");
        let k = dense.ncols();
        let mut out = Array2::<f64>::zeros((self.nrows, k));
        for (i, mut out_row) in out.outer_iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                out_row.scaled_add(v, &dense.row(j));
            }
        }
        out
    }

    /// `selfᵀ · dense` without materializing the transpose.
    pub fn transpose_mul_dense(&self, dense: &ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(dense.nrows(), self.nrows, "sparse-dense shape mismatch");
        let mut out = Array2::<f64>::zeros((self.ncols, dense.ncols()));
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let src = dense.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                out.row_mut(j).scaled_add(v, &src);
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.nrows, self.ncols));
        for (i, j, v) in self.triplets() {
            out[(i, j)] += v;
        }
        out
    }

    /// Largest absolute difference between `self` and its transpose.
    pub fn asymmetry(&self) -> f64 {
        if self.nrows != self.ncols {
            return f64::INFINITY;
        }
        let t = self.transpose();
        let diff = self.linear_combination(1.0, &t, -1.0);
        diff.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Gershgorin bound on the spectral radius: the largest absolute row sum.
    pub fn max_abs_row_sum(&self) -> f64 {
        (0..self.nrows)
            .map(|i| self.row(i).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}
