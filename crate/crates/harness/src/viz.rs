//! Thresholded coverage of attention rows, averaged over several matrices.
//!
//! For each row the columns are visited in descending weight order (ties by
//! ascending column) and marked until the running sum first exceeds the
//! threshold; the column that crosses is marked too.

use std::cmp::Ordering;

use cosformer_core::Matrix;

use crate::error::{HarnessError, Result};

/// Tolerance on row sums when checking inputs are row-stochastic.
pub const ROW_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageMatrix {
    pub size: usize,
    /// Row-major `size x size` values, each a multiple of `1 / n_matrices`.
    pub values: Vec<f64>,
    pub threshold: f64,
    pub n_matrices: usize,
}

impl CoverageMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }
}

fn validate(matrices: &[Matrix], threshold: f64) -> Result<usize> {
    let first = matrices
        .first()
        .ok_or_else(|| HarnessError::Usage("visualization needs at least one matrix".into()))?;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(HarnessError::Usage(format!("threshold {threshold} outside [0, 1]")));
    }
    let d = first.rows();
    for (idx, m) in matrices.iter().enumerate() {
        if m.shape() != (d, d) {
            return Err(HarnessError::Usage(format!(
                "matrix {idx} is {}x{}, expected {d}x{d}",
                m.rows(),
                m.cols()
            )));
        }
        for i in 0..d {
            let row = m.row(i);
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&x| x < 0.0) || (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(HarnessError::Usage(format!(
                    "matrix {idx} row {i} is not a probability row (sum {sum})"
                )));
            }
        }
    }
    Ok(d)
}

/// Averaged coverage mask of row-stochastic square matrices.
pub fn visualize_attention(matrices: &[Matrix], threshold: f64) -> Result<CoverageMatrix> {
    let d = validate(matrices, threshold)?;
    let mut counts = vec![0usize; d * d];
    let mut order: Vec<usize> = Vec::with_capacity(d);
    for m in matrices {
        for i in 0..d {
            let row = m.row(i);
            order.clear();
            order.extend(0..d);
            order.sort_by(|&a, &b| {
                row[b]
                    .partial_cmp(&row[a])
                    .unwrap_or(Ordering::Equal)
                    .then(a.cmp(&b))
            });
            let mut p = 0.0;
            for &col in &order {
                p += row[col];
                counts[i * d + col] += 1;
                if p > threshold {
                    break;
                }
            }
        }
    }
    let n = matrices.len();
    Ok(CoverageMatrix {
        size: d,
        values: counts.into_iter().map(|c| c as f64 / n as f64).collect(),
        threshold,
        n_matrices: n,
    })
}
