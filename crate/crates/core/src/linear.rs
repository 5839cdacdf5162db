//! Linear-cost attentions: kernelized attention with reordered products and
//! the cosine re-weighted variant, batch and streaming.
//!
//! Both keep four running sums over keys,
//! `S_cos = sum K_j^cos^T V_j`, `S_sin = sum K_j^sin^T V_j`,
//! `T_cos = sum K_j^cos` and `T_sin = sum K_j^sin`, and read each output
//! row as `(Q_i^cos S_cos + Q_i^sin S_sin) / max(Q_i^cos T_cos + Q_i^sin T_sin, eps)`.
//! Without re-weighting only the cos sums exist, with unit factors.

use crate::config::AttentionConfig;
use crate::error::{config_err, dim_err, Result};
use crate::feature_map::FeatureMapKind;
use crate::matrix::{AttentionDims, Matrix, Scalar};
use crate::reweight::position_factors;

/// Deliberate faults injected into the cosine forward to show that the
/// equivalence checks catch them. `None` is the correct computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mutation {
    #[default]
    None,
    /// Keys use 0-based positions while queries stay 1-based.
    PositionOffByOne,
    /// Only the cos half of the decomposition contributes.
    DropSinBranch,
    /// The denominator is used without the `eps` floor.
    NoDenominatorFloor,
}

impl Mutation {
    pub const ALL_FAULTS: [Mutation; 3] = [
        Mutation::PositionOffByOne,
        Mutation::DropSinBranch,
        Mutation::NoDenominatorFloor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mutation::None => "none",
            Mutation::PositionOffByOne => "position-off-by-one",
            Mutation::DropSinBranch => "drop-sin",
            Mutation::NoDenominatorFloor => "no-floor",
        }
    }
}

/// Running sums of the recurrent cosine attention.
///
/// Sums are kept in `f64` whatever the input precision. When created for
/// plain linear attention the sin sums are empty.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalState {
    /// `d_k x d_v`, row-major.
    pub s_cos: Vec<f64>,
    pub s_sin: Vec<f64>,
    pub t_cos: Vec<f64>,
    pub t_sin: Vec<f64>,
    /// Number of keys absorbed so far.
    pub t: usize,
    d_k: usize,
    d_v: usize,
    feature_map: FeatureMapKind,
}

impl CausalState {
    /// Zeroed state for ReLU features.
    pub fn new(d_k: usize, d_v: usize) -> Self {
        Self::with_feature_map(d_k, d_v, FeatureMapKind::Relu)
    }

    pub fn with_feature_map(d_k: usize, d_v: usize, feature_map: FeatureMapKind) -> Self {
        Self::alloc(d_k, d_v, feature_map, true)
    }

    fn alloc(d_k: usize, d_v: usize, feature_map: FeatureMapKind, with_sin: bool) -> Self {
        assert!(d_k > 0 && d_v > 0, "state dimensions must be positive");
        let sin_len = if with_sin { d_k } else { 0 };
        Self {
            s_cos: vec![0.0; d_k * d_v],
            s_sin: vec![0.0; sin_len * d_v],
            t_cos: vec![0.0; d_k],
            t_sin: vec![0.0; sin_len],
            t: 0,
            d_k,
            d_v,
            feature_map,
        }
    }

    pub fn d_k(&self) -> usize {
        self.d_k
    }

    pub fn d_v(&self) -> usize {
        self.d_v
    }

    /// Absorbs one key/value pair with position factors `(c, s)`.
    #[inline]
    fn absorb<T: Scalar>(&mut self, k: &[T], v: &[T], c: f64, s: f64) {
        let phi = self.feature_map;
        let d_v = self.d_v;
        let with_sin = !self.t_sin.is_empty();
        for (a, &kv) in k.iter().enumerate() {
            let kp = phi.apply(kv.to_f64());
            if kp == 0.0 {
                continue;
            }
            let kc = kp * c;
            self.t_cos[a] += kc;
            for (acc, &x) in self.s_cos[a * d_v..(a + 1) * d_v].iter_mut().zip(v) {
                *acc += kc * x.to_f64();
            }
            if with_sin {
                let ks = kp * s;
                self.t_sin[a] += ks;
                for (acc, &x) in self.s_sin[a * d_v..(a + 1) * d_v].iter_mut().zip(v) {
                    *acc += ks * x.to_f64();
                }
            }
        }
        self.t += 1;
    }

    /// Writes the numerator of query `q` into `num` and returns the raw
    /// denominator.
    #[inline]
    fn read<T: Scalar>(&self, q: &[T], c: f64, s: f64, use_sin: bool, num: &mut [f64]) -> f64 {
        let phi = self.feature_map;
        let d_v = self.d_v;
        let use_sin = use_sin && !self.t_sin.is_empty();
        num.iter_mut().for_each(|x| *x = 0.0);
        let mut den = 0.0;
        for (a, &qv) in q.iter().enumerate() {
            let qp = phi.apply(qv.to_f64());
            if qp == 0.0 {
                continue;
            }
            let qc = qp * c;
            den += qc * self.t_cos[a];
            for (acc, &x) in num.iter_mut().zip(&self.s_cos[a * d_v..(a + 1) * d_v]) {
                *acc += qc * x;
            }
            if use_sin {
                let qs = qp * s;
                den += qs * self.t_sin[a];
                for (acc, &x) in num.iter_mut().zip(&self.s_sin[a * d_v..(a + 1) * d_v]) {
                    *acc += qs * x;
                }
            }
        }
        den
    }

    /// Feeds position `t + 1` and returns its causal output row.
    ///
    /// Rows are feature-mapped internally. Fails when the position would
    /// exceed the horizon `m` or a row has the wrong width.
    pub fn step<T: Scalar>(&mut self, q: &[T], k: &[T], v: &[T], m: usize, eps: f64) -> Result<Vec<T>> {
        if q.len() != self.d_k || k.len() != self.d_k || v.len() != self.d_v {
            return dim_err(format!(
                "step rows have widths {}/{}/{}, state expects {}/{}/{}",
                q.len(),
                k.len(),
                v.len(),
                self.d_k,
                self.d_k,
                self.d_v
            ));
        }
        let pos = self.t + 1;
        if pos > m {
            return config_err(format!("position {pos} exceeds horizon {m}"));
        }
        let (c, s) = position_factors(pos, m);
        self.absorb(k, v, c, s);
        let mut num = vec![0.0; self.d_v];
        let den = self.read(q, c, s, true, &mut num);
        let den = den.max(eps);
        Ok(num.iter().map(|&x| T::from_f64(x / den)).collect())
    }
}

/// Kernelized linear attention `phi(Q) (phi(K)^T V)` normalized rowwise,
/// without re-weighting. Causal mode uses prefix sums.
pub fn linear_attention<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    feature_map: FeatureMapKind,
    causal: bool,
    eps: f64,
) -> Result<Matrix<T>> {
    let config = AttentionConfig::linear(feature_map, causal);
    config.validate()?;
    if eps.is_nan() || eps <= 0.0 {
        return config_err(format!("eps must be positive, got {eps}"));
    }
    let dims = AttentionDims::of(q, k, v, causal)?;
    Ok(kernelized_forward(q, k, v, feature_map, None, causal, eps, dims, Mutation::None))
}

/// Cosine re-weighted linear attention. Matches
/// [`kernel_attention_quadratic`](crate::reference::kernel_attention_quadratic)
/// under the same config without forming the weight matrix.
pub fn cosformer_attention<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    config: &AttentionConfig,
) -> Result<Matrix<T>> {
    cosformer_attention_mutated(q, k, v, config, Mutation::None)
}

/// [`cosformer_attention`] with an injected [`Mutation`].
pub fn cosformer_attention_mutated<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    config: &AttentionConfig,
    mutation: Mutation,
) -> Result<Matrix<T>> {
    config.validate()?;
    let dims = AttentionDims::of(q, k, v, config.causal)?;
    let Some(m) = config.reweight.horizon_for(dims.n_q, dims.n_k)? else {
        return config_err("cosformer attention requires cosine re-weighting");
    };
    Ok(kernelized_forward(
        q,
        k,
        v,
        config.feature_map,
        Some(m),
        config.causal,
        config.eps,
        dims,
        mutation,
    ))
}

/// Dispatches on `config.reweight` between [`linear_attention`] and
/// [`cosformer_attention`].
pub fn kernel_attention_linear<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    config: &AttentionConfig,
) -> Result<Matrix<T>> {
    match config.reweight {
        crate::config::ReweightScheme::None => {
            linear_attention(q, k, v, config.feature_map, config.causal, config.eps)
        }
        crate::config::ReweightScheme::Cosine(_) => cosformer_attention(q, k, v, config),
    }
}

#[allow(clippy::too_many_arguments)]
fn kernelized_forward<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    phi: FeatureMapKind,
    horizon: Option<usize>,
    causal: bool,
    eps: f64,
    dims: AttentionDims,
    mutation: Mutation,
) -> Matrix<T> {
    let mut state = CausalState::alloc(dims.d_k, dims.d_v, phi, horizon.is_some());
    let mut out = Vec::with_capacity(dims.n_q * dims.d_v);
    let mut num = vec![0.0f64; dims.d_v];

    let key_factors = |j: usize| match horizon {
        Some(m) => {
            let pos = if mutation == Mutation::PositionOffByOne { j } else { j + 1 };
            position_factors(pos, m)
        }
        None => (1.0, 0.0),
    };
    let query_factors = |i: usize| match horizon {
        Some(m) => position_factors(i + 1, m),
        None => (1.0, 0.0),
    };
    let use_sin = mutation != Mutation::DropSinBranch;
    let mut emit = |state: &CausalState, i: usize, out: &mut Vec<T>| {
        let (c, s) = query_factors(i);
        let den = state.read(q.row(i), c, s, use_sin, &mut num);
        let den = if mutation == Mutation::NoDenominatorFloor {
            den
        } else {
            den.max(eps)
        };
        out.extend(num.iter().map(|&x| T::from_f64(x / den)));
    };

    if causal {
        for i in 0..dims.n_q {
            let (c, s) = key_factors(i);
            state.absorb(k.row(i), v.row(i), c, s);
            emit(&state, i, &mut out);
        }
    } else {
        for j in 0..dims.n_k {
            let (c, s) = key_factors(j);
            state.absorb(k.row(j), v.row(j), c, s);
        }
        for i in 0..dims.n_q {
            emit(&state, i, &mut out);
        }
    }
    Matrix::from_raw(dims.n_q, dims.d_v, out)
}

/// Scalars allocated by one [`cosformer_attention`] call: the output,
/// four running sums and one numerator row.
pub fn cosformer_transient_scalars(n_q: usize, d_k: usize, d_v: usize) -> usize {
    n_q * d_v + 2 * d_k * d_v + 2 * d_k + d_v
}

/// Scalars allocated by one [`linear_attention`] call.
pub fn linear_transient_scalars(n_q: usize, d_k: usize, d_v: usize) -> usize {
    n_q * d_v + d_k * d_v + d_k + d_v
}
