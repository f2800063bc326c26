//! Minimal dense and sparse containers for the desk-scale models.

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix payload does not match shape");
        Matrix { rows, cols, data }
    }

    /// Gaussian entries with the given standard deviation, rounded to `f32` precision.
    pub fn random_normal(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, std).expect("finite std");
        let data = (0..rows * cols).map(|_| snap(normal.sample(rng))).collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `selfᵀ · x` for a sparse `x` indexed by rows.
    pub fn transpose_mul_sparse(&self, x: &SparseVec) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (idx, val) in x.iter() {
            for (o, w) in out.iter_mut().zip(self.row(idx)) {
                *o += val * w;
            }
        }
        out
    }

    /// `self += x ⊗ g` for sparse `x` (rows) and dense `g` (columns).
    pub fn add_outer_sparse(&mut self, x: &SparseVec, g: &[f64]) {
        for (idx, val) in x.iter() {
            for (w, gv) in self.row_mut(idx).iter_mut().zip(g) {
                *w += val * gv;
            }
        }
    }
}

/// Sparse vector with sorted, unique indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVec {
    len: usize,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseVec {
    pub fn zeros(len: usize) -> Self {
        SparseVec {
            len,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from unsorted `(index, value)` entries, summing duplicates and dropping
    /// exact zeros.
    pub fn from_entries(len: usize, mut entries: Vec<(usize, f64)>) -> Self {
        entries.sort_by_key(|e| e.0);
        let mut indices: Vec<usize> = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        for (i, v) in entries {
            assert!(i < len, "sparse index {i} out of range {len}");
            if indices.last() == Some(&i) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(i);
                values.push(v);
            }
        }
        let (indices, values) = indices
            .into_iter()
            .zip(values)
            .filter(|(_, v)| *v != 0.0)
            .unzip();
        SparseVec { len, indices, values }
    }

    /// Dimension of the dense space.
    pub fn dim(&self) -> usize {
        self.len
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_zero(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }
}

/// Rounds to the nearest `f32`, the precision in which parameters are persisted.
pub fn snap(x: f64) -> f64 {
    x as f32 as f64
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
