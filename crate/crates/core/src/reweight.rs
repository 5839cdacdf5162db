//! Cosine re-weighting of pairwise similarities and its decomposition into
//! per-position cos/sin factors.
//!
//! `cos(pi/2 * (i - j) / m) = cos(a_i) cos(a_j) + sin(a_i) sin(a_j)` with
//! `a_p = pi * p / (2m)`, so a re-weighted similarity splits into two
//! products that each factor over positions. Positions are 1-based.

use std::f64::consts::FRAC_PI_2;

use crate::error::{config_err, Result};
use crate::matrix::{Matrix, Scalar};

/// Angle `pi * pos / (2m)` of a 1-based position, evaluated directly in
/// `f64` for every position.
#[inline]
pub fn position_angle(pos: usize, m: usize) -> f64 {
    FRAC_PI_2 * pos as f64 / m as f64
}

/// `(cos, sin)` of [`position_angle`].
#[inline]
pub fn position_factors(pos: usize, m: usize) -> (f64, f64) {
    let (s, c) = position_angle(pos, m).sin_cos();
    (c, s)
}

/// Weight `cos(pi/2 * (i - j) / m)` between 1-based positions `i` and `j`.
#[inline]
pub fn cos_weight(i: usize, j: usize, m: usize) -> f64 {
    let delta = i as f64 - j as f64;
    (FRAC_PI_2 * delta / m as f64).cos()
}

fn check_horizon(n_q: usize, n_k: usize, m: usize) -> Result<()> {
    if m == 0 || m < n_q.max(n_k) {
        return config_err(format!(
            "horizon {m} must be at least max({n_q}, {n_k})"
        ));
    }
    Ok(())
}

/// Explicit `n_q x n_k` matrix of cosine weights.
pub fn build_reweight_matrix(n_q: usize, n_k: usize, m: usize) -> Result<Matrix<f64>> {
    check_horizon(n_q, n_k, m)?;
    if n_q == 0 || n_k == 0 {
        return config_err("reweight matrix needs positive lengths");
    }
    Ok(Matrix::from_fn(n_q, n_k, |i, j| cos_weight(i + 1, j + 1, m)))
}

/// Feature-mapped queries and keys scaled by the cos/sin factor of their
/// position.
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedFactors<T: Scalar = f64> {
    pub q_cos: Matrix<T>,
    pub q_sin: Matrix<T>,
    pub k_cos: Matrix<T>,
    pub k_sin: Matrix<T>,
    pub m: usize,
}

impl<T: Scalar> DecomposedFactors<T> {
    /// `q_cos_i . k_cos_j + q_sin_i . k_sin_j`, accumulated in `f64`.
    pub fn reconstruct(&self, i: usize, j: usize) -> f64 {
        let dot = |a: &[T], b: &[T]| -> f64 {
            a.iter().zip(b).map(|(x, y)| x.to_f64() * y.to_f64()).sum()
        };
        dot(self.q_cos.row(i), self.k_cos.row(j)) + dot(self.q_sin.row(i), self.k_sin.row(j))
    }
}

fn scale_rows<T: Scalar>(x: &Matrix<T>, m: usize) -> (Matrix<T>, Matrix<T>) {
    let mut cos = x.clone();
    let mut sin = x.clone();
    for i in 0..x.rows() {
        let (c, s) = position_factors(i + 1, m);
        for (dst, &v) in cos.row_mut(i).iter_mut().zip(x.row(i)) {
            *dst = T::from_f64(v.to_f64() * c);
        }
        for (dst, &v) in sin.row_mut(i).iter_mut().zip(x.row(i)) {
            *dst = T::from_f64(v.to_f64() * s);
        }
    }
    (cos, sin)
}

/// Splits already feature-mapped `qp`, `kp` into cos/sin factor matrices.
pub fn decompose<T: Scalar>(qp: &Matrix<T>, kp: &Matrix<T>, m: usize) -> Result<DecomposedFactors<T>> {
    check_horizon(qp.rows(), kp.rows(), m)?;
    let (q_cos, q_sin) = scale_rows(qp, m);
    let (k_cos, k_sin) = scale_rows(kp, m);
    Ok(DecomposedFactors {
        q_cos,
        q_sin,
        k_cos,
        k_sin,
        m,
    })
}
