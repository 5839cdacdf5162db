//! Elementwise feature maps applied to queries and keys before the
//! similarity dot product.

use crate::matrix::{Matrix, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum FeatureMapKind {
    Identity,
    #[default]
    Relu,
    /// Negative inputs are scaled by `slope`, which must lie in (0, 1).
    LeakyRelu { slope: f64 },
    /// `elu(x) + 1`: `exp(x)` below zero, `x + 1` otherwise.
    EluPlusOne,
}

impl FeatureMapKind {
    /// True when every output is `>= 0` for every finite input.
    pub fn is_non_negative(self) -> bool {
        matches!(self, FeatureMapKind::Relu | FeatureMapKind::EluPlusOne)
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            FeatureMapKind::Identity => x,
            FeatureMapKind::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            FeatureMapKind::LeakyRelu { slope } => {
                if x < 0.0 {
                    slope * x
                } else {
                    x
                }
            }
            FeatureMapKind::EluPlusOne => {
                if x < 0.0 {
                    x.exp()
                } else {
                    x + 1.0
                }
            }
        }
    }

    /// Derivative of [`apply`](Self::apply). The ReLU subgradient at 0 is 0.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            FeatureMapKind::Identity => 1.0,
            FeatureMapKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            FeatureMapKind::LeakyRelu { slope } => {
                if x < 0.0 {
                    slope
                } else {
                    1.0
                }
            }
            FeatureMapKind::EluPlusOne => {
                if x < 0.0 {
                    x.exp()
                } else {
                    1.0
                }
            }
        }
    }

    /// Whether `x` sits at a point where the map is not differentiable.
    pub fn near_kink(self, x: f64, tol: f64) -> bool {
        match self {
            FeatureMapKind::Relu | FeatureMapKind::LeakyRelu { .. } => x.abs() <= tol,
            FeatureMapKind::Identity | FeatureMapKind::EluPlusOne => false,
        }
    }

    pub fn name(self) -> String {
        match self {
            FeatureMapKind::Identity => "identity".into(),
            FeatureMapKind::Relu => "relu".into(),
            FeatureMapKind::LeakyRelu { slope } => format!("leaky_relu({slope})"),
            FeatureMapKind::EluPlusOne => "elu_plus_one".into(),
        }
    }
}

/// Applies `kind` to every entry of `x`.
pub fn apply_feature_map<T: Scalar>(x: &Matrix<T>, kind: FeatureMapKind) -> Matrix<T> {
    x.map(|v| T::from_f64(kind.apply(v.to_f64())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(v: &[f64]) -> Matrix<f64> {
        Matrix::from_rows(&[v])
    }

    #[test]
    fn relu_clamps_negatives() {
        let out = apply_feature_map(&row(&[-1.0, 2.0, 0.0]), FeatureMapKind::Relu);
        assert_eq!(out.as_slice(), &[0.0, 2.0, 0.0]);
    }

    #[test]
    fn identity_copies() {
        let out = apply_feature_map(&row(&[-1.0, 2.0]), FeatureMapKind::Identity);
        assert_eq!(out.as_slice(), &[-1.0, 2.0]);
    }

    #[test]
    fn leaky_relu_scales_negatives() {
        let out = apply_feature_map(
            &row(&[-1.0, 0.0, 3.0]),
            FeatureMapKind::LeakyRelu { slope: 0.01 },
        );
        assert_eq!(out.as_slice(), &[-0.01, 0.0, 3.0]);
    }

    #[test]
    fn elu_plus_one_branches() {
        let out = apply_feature_map(&row(&[-2.0, 0.0, 1.5]), FeatureMapKind::EluPlusOne);
        assert_eq!(out.as_slice(), &[(-2.0f64).exp(), 1.0, 2.5]);
    }

    proptest! {
        #[test]
        fn non_negative_maps_stay_non_negative(vals in proptest::collection::vec(-50.0f64..50.0, 1..20)) {
            let m = row(&vals);
            for kind in [FeatureMapKind::Relu, FeatureMapKind::EluPlusOne] {
                let out = apply_feature_map(&m, kind);
                prop_assert!(out.as_slice().iter().all(|&v| v >= 0.0));
                prop_assert_eq!(out.shape(), m.shape());
            }
        }

        #[test]
        fn derivative_matches_difference_quotient(x in -5.0f64..5.0) {
            prop_assume!(x.abs() > 1e-3);
            let h = 1e-6;
            for kind in [
                FeatureMapKind::Identity,
                FeatureMapKind::Relu,
                FeatureMapKind::LeakyRelu { slope: 0.2 },
                FeatureMapKind::EluPlusOne,
            ] {
                let fd = (kind.apply(x + h) - kind.apply(x - h)) / (2.0 * h);
                prop_assert!((fd - kind.derivative(x)).abs() < 1e-6);
            }
        }
    }
}
