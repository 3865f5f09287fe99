//! Dense row-major containers: `f32` embeddings and `f64` probability rows.

use crate::error::{dim_err, Result, TacError};
use crate::math;

/// `rows x dim` row-major matrix of embedding vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
    normalized: bool,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(dim_err(format!(
                "embedding matrix must be non-empty, got {rows}x{dim}"
            )));
        }
        if data.len() != rows * dim {
            return Err(dim_err(format!(
                "{rows}x{dim} matrix needs {} values, got {}",
                rows * dim,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(TacError::Data(format!(
                "non-finite value at row {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self {
            rows,
            dim,
            data,
            normalized: false,
        })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.as_ref().len() != dim {
                return Err(dim_err(format!(
                    "row {i} has length {}, expected {dim}",
                    r.as_ref().len()
                )));
            }
            data.extend_from_slice(r.as_ref());
        }
        Self::new(rows.len(), dim, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// True when every row has been scaled to unit norm by this crate.
    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    /// Scales every row to unit norm.
    pub fn normalize_rows(&mut self) -> Result<()> {
        for (i, row) in self.data.chunks_exact_mut(self.dim).enumerate() {
            math::l2_normalize_in_place(row).map_err(|_| {
                TacError::Data(format!("row {i} is a zero vector and cannot be normalized"))
            })?;
        }
        self.normalized = true;
        Ok(())
    }

    pub fn normalized(mut self) -> Result<Self> {
        self.normalize_rows()?;
        Ok(self)
    }

    /// Marks the rows as unit-norm after checking them against `tol`.
    pub fn assume_normalized(mut self, tol: f64) -> Result<Self> {
        for (i, row) in self.iter_rows().enumerate() {
            let n = math::norm(row);
            if (n - 1.0).abs() > tol {
                return Err(TacError::Data(format!(
                    "row {i} has norm {n}, expected unit norm"
                )));
            }
        }
        self.normalized = true;
        Ok(self)
    }

    pub fn max_norm_deviation(&self) -> f64 {
        self.iter_rows()
            .map(|r| (math::norm(r) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Copies the given rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            if i >= self.rows {
                return Err(dim_err(format!(
                    "row index {i} out of range for {} rows",
                    self.rows
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        let mut out = Self::new(indices.len(), self.dim, data)?;
        out.normalized = self.normalized;
        Ok(out)
    }

    /// Row `i` widened to `f64`.
    pub fn row_f64(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        self.row(i).iter().map(|&x| x as f64)
    }

    pub(crate) fn set_normalized(&mut self, flag: bool) {
        self.normalized = flag;
    }
}

/// Row-stochastic `rows x cols` matrix of probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ProbMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(dim_err(format!(
                "{rows}x{cols} probability matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix and checks that every row is a distribution within `tol`.
    pub fn checked(rows: usize, cols: usize, data: Vec<f64>, tol: f64) -> Result<Self> {
        let m = Self::new(rows, cols, data)?;
        m.validate(tol)?;
        Ok(m)
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        for i in 0..self.rows {
            let row = self.row(i);
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(TacError::Data(format!(
                    "row {i} has a negative or non-finite entry"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > tol {
                return Err(TacError::Data(format!("row {i} sums to {s}")));
            }
        }
        Ok(())
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(dim_err("ragged probability rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Row-wise argmax, ties to the lowest column.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows).map(|i| math::argmax(self.row(i))).collect()
    }

    /// Mean over rows, one value per column.
    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (m, &p) in means.iter_mut().zip(self.row(i)) {
                *m += p;
            }
        }
        let n = self.rows.max(1) as f64;
        means.iter_mut().for_each(|m| *m /= n);
        means
    }

    /// Permutes rows: output row `i` is input row `order[i]`.
    pub fn permute_rows(&self, order: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for &i in order {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: order.len(),
            cols: self.cols,
            data,
        }
    }

    /// Permutes columns: output column `j` is input column `order[j]`.
    pub fn permute_cols(&self, order: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for i in 0..self.rows {
            let row = self.row(i);
            data.extend(order.iter().map(|&j| row[j]));
        }
        Self {
            rows: self.rows,
            cols: order.len(),
            data,
        }
    }
}
