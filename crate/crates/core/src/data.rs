//! Row-major matrix of copula observations.

use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{arg, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataMatrix {
    n: usize,
    d: usize,
    values: Vec<f64>,
}

impl DataMatrix {
    pub fn new(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * d {
            return arg(format!("expected {} values for a {n}x{d} matrix, got {}", n * d, values.len()));
        }
        Ok(DataMatrix { n, d, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut values = Vec::with_capacity(rows.len() * d);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return arg(format!("row {i} has {} columns, expected {d}", r.len()));
            }
            values.extend_from_slice(r);
        }
        DataMatrix::new(rows.len(), d, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.d.max(1))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.values[i * self.d + j]).collect()
    }

    /// Rows `[start, end)` as a new matrix.
    pub fn slice(&self, start: usize, end: usize) -> DataMatrix {
        DataMatrix { n: end - start, d: self.d, values: self.values[start * self.d..end * self.d].to_vec() }
    }

    /// Vertical concatenation.
    pub fn concat(&self, other: &DataMatrix) -> Result<DataMatrix> {
        if self.d != other.d {
            return arg("cannot concatenate matrices with different column counts");
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        DataMatrix::new(self.n + other.n, self.d, values)
    }

    /// Rows reordered by `perm`.
    pub fn permute_rows(&self, perm: &[usize]) -> DataMatrix {
        let mut values = Vec::with_capacity(self.values.len());
        for &i in perm {
            values.extend_from_slice(self.row(i));
        }
        DataMatrix { n: perm.len(), d: self.d, values }
    }

    /// Errors unless every entry lies strictly inside `(0, 1)`.
    pub fn check_interior(&self) -> Result<()> {
        for (idx, &v) in self.values.iter().enumerate() {
            if !(v > 0.0 && v < 1.0) {
                return arg(format!("observation ({}, {}) = {v} is not strictly inside (0,1)", idx / self.d.max(1), idx % self.d.max(1)));
            }
        }
        Ok(())
    }

    /// Copy with every entry clamped to `[eps, 1 - eps]`.
    pub fn clamped(&self, eps: f64) -> DataMatrix {
        DataMatrix { n: self.n, d: self.d, values: self.values.iter().map(|v| v.clamp(eps, 1.0 - eps)).collect() }
    }

    /// Row-order-insensitive fingerprint used to match fits to the data they came from.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.n.hash(&mut h);
        self.d.hash(&mut h);
        let mut sorted: Vec<u64> = self.values.chunks(self.d.max(1)).map(|r| {
            let mut rh = std::collections::hash_map::DefaultHasher::new();
            for v in r {
                v.to_bits().hash(&mut rh);
            }
            rh.finish()
        }).collect();
        sorted.sort_unstable();
        sorted.hash(&mut h);
        h.finish()
    }
}
