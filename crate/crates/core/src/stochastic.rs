//! Dense row-stochastic matrices over small state spaces.

use crate::error::{Error, Result};

/// Tolerance on row sums when accepting an externally built matrix.
pub const ROW_STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix {
    size: usize,
    entries: Vec<f64>,
}

impl StochasticMatrix {
    pub fn identity(size: usize) -> Self {
        let mut entries = vec![0.0; size * size];
        for i in 0..size {
            entries[i * size + i] = 1.0;
        }
        StochasticMatrix { size, entries }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let size = rows.len();
        if size == 0 {
            return Err(Error::validation("empty stochastic matrix"));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != size {
                return Err(Error::validation(format!("row {i} is not of length {size}")));
            }
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::validation(format!("row {i} has an entry outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_STOCHASTIC_TOL {
                return Err(Error::validation(format!("row {i} sums to {sum}")));
            }
        }
        Ok(StochasticMatrix {
            size,
            entries: rows.into_iter().flatten().collect(),
        })
    }

    pub(crate) fn from_raw(size: usize, entries: Vec<f64>) -> Self {
        debug_assert_eq!(entries.len(), size * size);
        StochasticMatrix { size, entries }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.entries[from * self.size + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.entries[from * self.size..(from + 1) * self.size]
    }

    /// Row vector times matrix, `(mu P)(y) = sum_x mu(x) P(x, y)`.
    pub fn left_multiply(&self, mu: &[f64]) -> Result<Vec<f64>> {
        if mu.len() != self.size {
            return Err(Error::validation(format!(
                "vector of length {} against a {}-state matrix",
                mu.len(),
                self.size
            )));
        }
        let mut out = vec![0.0; self.size];
        for (x, &m) in mu.iter().enumerate() {
            if m != 0.0 {
                for (o, &p) in out.iter_mut().zip(self.row(x)) {
                    *o += m * p;
                }
            }
        }
        Ok(out)
    }

    /// Largest deviation of a row sum from one.
    pub fn max_row_defect(&self) -> f64 {
        (0..self.size)
            .map(|x| (self.row(x).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}
