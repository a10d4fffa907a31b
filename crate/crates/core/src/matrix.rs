//! Row-major stack of per-node vectors.

use std::fmt;

/// An `m × d` matrix whose row `i` is node `i`'s vector.
#[derive(Clone, PartialEq)]
pub struct NodeMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl NodeMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        NodeMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Every row set to `x`.
    pub fn broadcast(rows: usize, x: &[f64]) -> Self {
        let mut data = Vec::with_capacity(rows * x.len());
        for _ in 0..rows {
            data.extend_from_slice(x);
        }
        NodeMatrix {
            rows,
            cols: x.len(),
            data,
        }
    }

    /// Builds from row vectors. Panics if the rows have different lengths.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        NodeMatrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must be rows * cols");
        NodeMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks(0) panics, so handle the degenerate width separately
        let cols = self.cols.max(1);
        let n = if self.cols == 0 { 0 } else { self.rows };
        self.data.chunks(cols).take(n)
    }

    /// Column-wise mean `(1/m) 1ᵀ Z`.
    pub fn mean_row(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.cols];
        for r in self.iter_rows() {
            for (acc, v) in mean.iter_mut().zip(r) {
                *acc += v;
            }
        }
        let inv = 1.0 / self.rows.max(1) as f64;
        mean.iter_mut().for_each(|v| *v *= inv);
        mean
    }

    /// Frobenius norm of `Z − 1 z̄`.
    pub fn consensus_error(&self) -> f64 {
        let mean = self.mean_row();
        self.iter_rows()
            .flat_map(|r| r.iter().zip(&mean).map(|(v, m)| (v - m) * (v - m)))
            .sum::<f64>()
            .sqrt()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn copy_from(&mut self, other: &NodeMatrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.copy_from_slice(&other.data);
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &NodeMatrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl fmt::Debug for NodeMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NodeMatrix")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .finish_non_exhaustive()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}
