//! Linear attention with ReLU feature maps and cosine re-weighting.
//!
//! The crate provides quadratic reference attentions ([`reference`]), the
//! cosine re-weighting and its factorization ([`reweight`]), linear-cost
//! batch and streaming attentions ([`linear`]), analytic gradients
//! ([`grad`]) and a one-block toy model trained on a copy task
//! ([`model`], [`train`]).

pub mod config;
pub mod error;
pub mod feature_map;
pub mod grad;
pub mod linear;
pub mod matrix;
pub mod model;
pub mod reference;
pub mod reweight;
pub mod train;

pub use config::{AttentionConfig, Horizon, ReweightScheme, DEFAULT_EPS};
pub use error::{Error, Result};
pub use feature_map::{apply_feature_map, FeatureMapKind};
pub use linear::{
    cosformer_attention, kernel_attention_linear, linear_attention, CausalState, Mutation,
};
pub use matrix::{AttentionDims, Matrix, Scalar};
pub use reference::{
    attention_weights_quadratic, kernel_attention_quadratic, softmax_attention, softmax_weights,
};
pub use reweight::{build_reweight_matrix, cos_weight, decompose, DecomposedFactors};
