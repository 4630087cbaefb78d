use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};

/// Observed `(link, time)` index set with the sampling operator that keeps
/// observed entries and zeroes the rest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingMask {
    rows: usize,
    cols: usize,
    /// Column-major membership flags.
    observed: Vec<bool>,
}

impl SamplingMask {
    pub fn full(rows: usize, cols: usize) -> Self {
        Self { rows, cols, observed: vec![true; rows * cols] }
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Self { rows, cols, observed: vec![false; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut observed = Vec::with_capacity(rows * cols);
        for c in 0..cols {
            for r in 0..rows {
                observed.push(f(r, c));
            }
        }
        Self { rows, cols, observed }
    }

    /// Mask whose column `t` observes exactly `columns[t]`.
    pub fn from_columns(rows: usize, columns: &[Vec<usize>]) -> Result<Self> {
        let mut mask = Self::empty(rows, columns.len());
        for (t, idx) in columns.iter().enumerate() {
            for &l in idx {
                if l >= rows {
                    return Err(invalid(format!("mask index {l} out of range")));
                }
                mask.set(l, t, true);
            }
        }
        Ok(mask)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.observed[col * self.rows + row]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.observed[col * self.rows + row] = value;
    }

    pub fn count(&self) -> usize {
        self.observed.iter().filter(|o| **o).count()
    }

    /// Observed row indices of column `col`, ascending.
    pub fn column_indices(&self, col: usize) -> Vec<usize> {
        (0..self.rows).filter(|&r| self.contains(r, col)).collect()
    }

    /// Observed column indices of row `row`, ascending.
    pub fn row_indices(&self, row: usize) -> Vec<usize> {
        (0..self.cols).filter(|&c| self.contains(row, c)).collect()
    }

    pub fn complement(&self) -> Self {
        Self { rows: self.rows, cols: self.cols, observed: self.observed.iter().map(|o| !o).collect() }
    }

    /// Column `col` as a 0/1 vector.
    pub fn column_vector(&self, col: usize) -> DVector<f64> {
        DVector::from_fn(self.rows, |r, _| if self.contains(r, col) { 1.0 } else { 0.0 })
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |r, c| if self.contains(r, c) { 1.0 } else { 0.0 })
    }

    /// Keeps only the given rows (renumbered in order).
    pub fn restrict_rows(&self, rows: &[usize]) -> Self {
        Self::from_fn(rows.len(), self.cols, |r, c| self.contains(rows[r], c))
    }

    /// Keeps columns `range`.
    pub fn slice_cols(&self, range: std::ops::Range<usize>) -> Self {
        let start = range.start;
        Self::from_fn(self.rows, range.len(), |r, c| self.contains(r, c + start))
    }

    /// The sampling operator: observed entries kept, others zeroed.
    pub fn apply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(m.shape(), (self.rows, self.cols), "mask shape mismatch");
        DMatrix::from_fn(self.rows, self.cols, |r, c| if self.contains(r, c) { m[(r, c)] } else { 0.0 })
    }

    pub fn apply_in_place(&self, m: &mut DMatrix<f64>) {
        assert_eq!(m.shape(), (self.rows, self.cols), "mask shape mismatch");
        for c in 0..self.cols {
            for r in 0..self.rows {
                if !self.contains(r, c) {
                    m[(r, c)] = 0.0;
                }
            }
        }
    }
}

/// `S x L` selection matrix whose rows are the identity rows listed in
/// `observed` (0-indexed).
pub fn selection_matrix(observed: &[usize], size: usize) -> Result<DMatrix<f64>> {
    let mut seen = vec![false; size];
    for &i in observed {
        if i >= size {
            return Err(mismatch(format!("selection index {i} out of range 0..{size}")));
        }
        if seen[i] {
            return Err(invalid(format!("duplicate selection index {i}")));
        }
        seen[i] = true;
    }
    let mut s = DMatrix::zeros(observed.len(), size);
    for (row, &i) in observed.iter().enumerate() {
        s[(row, i)] = 1.0;
    }
    Ok(s)
}
