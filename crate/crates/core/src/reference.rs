//! Quadratic-cost reference attentions. These materialize the full
//! `n_q x n_k` weight matrix and serve as oracles for the linear variants.

use crate::config::AttentionConfig;
use crate::error::Result;
use crate::matrix::{AttentionDims, Matrix, Scalar};
use crate::reweight::cos_weight;

/// Softmax attention `softmax(Q K^T [/ sqrt(d_k)]) V`, optionally causal.
pub fn softmax_attention<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    causal: bool,
    scale: bool,
) -> Result<Matrix<T>> {
    let dims = AttentionDims::of(q, k, v, causal)?;
    let weights = softmax_weights_wide(q, k, causal, scale, dims)?;
    Ok(weighted_sum(&weights, v))
}

/// Row-stochastic softmax weights in `f64`; masked entries are exactly 0.
pub fn softmax_weights<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    causal: bool,
    scale: bool,
) -> Result<Matrix<f64>> {
    let dims = AttentionDims::of_qk(q, k, causal)?;
    softmax_weights_wide(q, k, causal, scale, dims)
}

fn softmax_weights_wide<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    causal: bool,
    scale: bool,
    dims: AttentionDims,
) -> Result<Matrix<f64>> {
    let factor = if scale {
        1.0 / (dims.d_k as f64).sqrt()
    } else {
        1.0
    };
    let mut w = vec![0.0f64; dims.n_q * dims.n_k];
    for i in 0..dims.n_q {
        let limit = if causal { i + 1 } else { dims.n_k };
        let row = &mut w[i * dims.n_k..(i + 1) * dims.n_k];
        let qi = q.row(i);
        let mut max = f64::NEG_INFINITY;
        for (j, slot) in row.iter_mut().enumerate().take(limit) {
            let s: f64 = qi
                .iter()
                .zip(k.row(j))
                .map(|(a, b)| a.to_f64() * b.to_f64())
                .sum::<f64>()
                * factor;
            *slot = s;
            max = max.max(s);
        }
        let mut total = 0.0;
        for slot in row.iter_mut().take(limit) {
            *slot = (*slot - max).exp();
            total += *slot;
        }
        for slot in row.iter_mut().take(limit) {
            *slot /= total;
        }
    }
    Ok(Matrix::from_raw(dims.n_q, dims.n_k, w))
}

/// Explicit normalized kernel attention weights.
///
/// Entry `(i, j)` is `phi(Q_i) . phi(K_j) * w(i, j)` over the row sum
/// floored at `eps`, with `w` the cosine weight (or 1) and entries above
/// the diagonal masked in causal mode. Returned in `f64`.
pub fn attention_weights_quadratic<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    config: &AttentionConfig,
) -> Result<Matrix<f64>> {
    config.validate()?;
    let dims = AttentionDims::of_qk(q, k, config.causal)?;
    let horizon = config.reweight.horizon_for(dims.n_q, dims.n_k)?;
    let phi = config.feature_map;
    let qp: Vec<f64> = q.as_slice().iter().map(|v| phi.apply(v.to_f64())).collect();
    let kp: Vec<f64> = k.as_slice().iter().map(|v| phi.apply(v.to_f64())).collect();
    let d = dims.d_k;

    let mut w = vec![0.0f64; dims.n_q * dims.n_k];
    for i in 0..dims.n_q {
        let limit = if config.causal { i + 1 } else { dims.n_k };
        let qi = &qp[i * d..(i + 1) * d];
        let row = &mut w[i * dims.n_k..(i + 1) * dims.n_k];
        let mut total = 0.0;
        for (j, slot) in row.iter_mut().enumerate().take(limit) {
            let kj = &kp[j * d..(j + 1) * d];
            let mut s: f64 = qi.iter().zip(kj).map(|(a, b)| a * b).sum();
            if let Some(m) = horizon {
                s *= cos_weight(i + 1, j + 1, m);
            }
            *slot = s;
            total += s;
        }
        let denom = total.max(config.eps);
        for slot in row.iter_mut().take(limit) {
            *slot /= denom;
        }
    }
    Ok(Matrix::from_raw(dims.n_q, dims.n_k, w))
}

/// `attention_weights_quadratic(Q, K) * V`: the O(N^2) oracle for every
/// linear attention in this crate.
pub fn kernel_attention_quadratic<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    config: &AttentionConfig,
) -> Result<Matrix<T>> {
    AttentionDims::of(q, k, v, config.causal)?;
    let weights = attention_weights_quadratic(q, k, config)?;
    Ok(weighted_sum(&weights, v))
}

/// Scalars allocated by one [`softmax_attention`] call: the weight
/// matrix, the output and one accumulator row.
pub fn softmax_transient_scalars(n_q: usize, n_k: usize, d_v: usize) -> usize {
    n_q * n_k + n_q * d_v + d_v
}

/// Scalars allocated by one [`kernel_attention_quadratic`] call: mapped
/// queries and keys, the weight matrix, the output and one accumulator row.
pub fn kernel_quadratic_transient_scalars(n_q: usize, n_k: usize, d_k: usize, d_v: usize) -> usize {
    (n_q + n_k) * d_k + n_q * n_k + n_q * d_v + d_v
}

fn weighted_sum<T: Scalar>(weights: &Matrix<f64>, v: &Matrix<T>) -> Matrix<T> {
    let (n_q, n_k) = weights.shape();
    let d_v = v.cols();
    let mut out = Vec::with_capacity(n_q * d_v);
    let mut acc = vec![0.0f64; d_v];
    for i in 0..n_q {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for j in 0..n_k {
            let w = weights.get(i, j);
            if w == 0.0 {
                continue;
            }
            for (a, &x) in acc.iter_mut().zip(v.row(j)) {
                *a += w * x.to_f64();
            }
        }
        out.extend(acc.iter().map(|&a| T::from_f64(a)));
    }
    Matrix::from_raw(n_q, d_v, out)
}
