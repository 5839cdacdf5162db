//! Dense row-major matrices with a storage precision parameter.
//!
//! Elements are stored as `T` (`f32` for standard precision, `f64` for wide
//! precision) while every reduction in this crate accumulates in `f64`.

use std::fmt;

use crate::error::{dim_err, Error, Result};

/// Storage element of a [`Matrix`].
pub trait Scalar:
    Copy + Default + PartialEq + PartialOrd + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    /// Short name used in reports ("f32" / "f64").
    const NAME: &'static str;
    /// Unit roundoff of the storage type.
    const EPSILON: f64;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
    const EPSILON: f64 = f32::EPSILON as f64;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
    const EPSILON: f64 = f64::EPSILON;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

/// Dense 2-D array in row-major order with finite entries.
#[derive(Clone, PartialEq)]
pub struct Matrix<T = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    /// Builds a matrix from row-major data, rejecting empty shapes,
    /// length mismatches and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return dim_err(format!("matrix shape {rows}x{cols} must be non-empty"));
        }
        if data.len() != rows * cols {
            return dim_err(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            ));
        }
        if let Some(idx) = data.iter().position(|v| !v.to_f64().is_finite()) {
            return Err(Error::NonFinite {
                row: idx / cols,
                col: idx % cols,
                value: data[idx].to_f64(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input or
    /// non-finite values; intended for literals in tests and examples.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        assert!(
            rows.iter().all(|r| r.as_ref().len() == cols),
            "ragged rows in Matrix::from_rows"
        );
        let data = rows
            .iter()
            .flat_map(|r| r.as_ref().iter().map(|&v| T::from_f64(v)))
            .collect();
        Self::new(rows.len(), cols, data).expect("invalid matrix literal")
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix shape must be non-empty");
        Self {
            rows,
            cols,
            data: vec![T::default(); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(rows > 0 && cols > 0, "matrix shape must be non-empty");
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(T::from_f64(f(i, j)));
            }
        }
        Self { rows, cols, data }
    }

    /// Wraps data produced by this crate's own kernels. Shape is checked in
    /// debug builds only; finiteness is not re-validated.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map(&self, mut f: impl FnMut(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Converts storage precision, rounding when narrowing.
    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                out.push(self.get(i, j));
            }
        }
        Self::from_raw(self.cols, self.rows, out)
    }

    /// Matrix product with `f64` accumulation.
    pub fn matmul(&self, rhs: &Matrix<T>) -> Result<Self> {
        if self.cols != rhs.rows {
            return dim_err(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            ));
        }
        let mut out = Vec::with_capacity(self.rows * rhs.cols);
        let mut acc = vec![0.0f64; rhs.cols];
        for i in 0..self.rows {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for (p, &a) in self.row(i).iter().enumerate() {
                let a = a.to_f64();
                if a == 0.0 {
                    continue;
                }
                for (acc_j, &b) in acc.iter_mut().zip(rhs.row(p)) {
                    *acc_j += a * b.to_f64();
                }
            }
            out.extend(acc.iter().map(|&v| T::from_f64(v)));
        }
        Ok(Self::from_raw(self.rows, rhs.cols, out))
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .map(|v| v.to_f64().abs())
            .fold(0.0, f64::max)
    }

    /// Largest absolute entrywise difference. NaN if either side holds NaN.
    pub fn max_abs_diff(&self, other: &Matrix<T>) -> f64 {
        assert_eq!(self.shape(), other.shape(), "shape mismatch in max_abs_diff");
        let mut worst = 0.0f64;
        for (a, b) in self.data.iter().zip(&other.data) {
            let d = (a.to_f64() - b.to_f64()).abs();
            if d.is_nan() {
                return f64::NAN;
            }
            worst = worst.max(d);
        }
        worst
    }

    /// Scale-relative error `max|a-b| / max|reference|`, the metric every
    /// equivalence check in this workspace uses. Two all-zero matrices
    /// compare as 0.
    pub fn rel_err(&self, reference: &Matrix<T>) -> f64 {
        let diff = self.max_abs_diff(reference);
        if diff == 0.0 {
            return 0.0;
        }
        diff / reference.max_abs().max(f64::MIN_POSITIVE)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.to_f64().is_finite())
    }
}

impl<T: Scalar> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix<{}> {}x{} [", T::NAME, self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for v in self.row(i) {
                write!(f, "{v:>12.6} ")?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

/// Shapes of one attention call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionDims {
    pub n_q: usize,
    pub n_k: usize,
    pub d_k: usize,
    pub d_v: usize,
}

impl AttentionDims {
    /// Validates that `q`, `k`, `v` form a consistent attention problem.
    pub fn of<T: Scalar>(q: &Matrix<T>, k: &Matrix<T>, v: &Matrix<T>, causal: bool) -> Result<Self> {
        let dims = Self::of_qk(q, k, causal)?;
        if v.rows() != k.rows() {
            return dim_err(format!(
                "value rows {} must match key rows {}",
                v.rows(),
                k.rows()
            ));
        }
        Ok(Self {
            d_v: v.cols(),
            ..dims
        })
    }

    pub(crate) fn of_qk<T: Scalar>(q: &Matrix<T>, k: &Matrix<T>, causal: bool) -> Result<Self> {
        if q.cols() != k.cols() {
            return dim_err(format!(
                "query width {} must match key width {}",
                q.cols(),
                k.cols()
            ));
        }
        if causal && q.rows() != k.rows() {
            return dim_err(format!(
                "causal attention needs equal lengths, got {} queries and {} keys",
                q.rows(),
                k.rows()
            ));
        }
        Ok(Self {
            n_q: q.rows(),
            n_k: k.rows(),
            d_k: q.cols(),
            d_v: 0,
        })
    }
}
