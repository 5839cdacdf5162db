//! Reverse-mode gradients of the attention forwards and a central
//! finite-difference checker.

use crate::config::AttentionConfig;
use crate::error::{dim_err, Result};
use crate::matrix::{AttentionDims, Matrix, Scalar};
use crate::reference::softmax_weights;
use crate::reweight::position_factors;

/// Gradients of `sum(d_out * O)` with respect to the three inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads<T: Scalar = f64> {
    pub d_q: Matrix<T>,
    pub d_k: Matrix<T>,
    pub d_v: Matrix<T>,
}

fn check_d_out<T: Scalar>(d_out: &Matrix<T>, dims: &AttentionDims) -> Result<()> {
    if d_out.shape() != (dims.n_q, dims.d_v) {
        return dim_err(format!(
            "output gradient is {}x{}, forward output is {}x{}",
            d_out.rows(),
            d_out.cols(),
            dims.n_q,
            dims.d_v
        ));
    }
    Ok(())
}

/// Backward pass of the kernelized linear attentions
/// ([`linear_attention`](crate::linear_attention) when `config.reweight`
/// is `None`, [`cosformer_attention`](crate::cosformer_attention)
/// otherwise).
///
/// Runs in `O(n d_k d_v)` without forming `n x n` matrices. Position
/// factors are constants, the feature-map derivative gates each input
/// coordinate and a floored denominator is treated as a constant.
pub fn cosformer_backward<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    config: &AttentionConfig,
    d_out: &Matrix<T>,
) -> Result<AttentionGrads<T>> {
    config.validate()?;
    let dims = AttentionDims::of(q, k, v, config.causal)?;
    check_d_out(d_out, &dims)?;
    let horizon = config.reweight.horizon_for(dims.n_q, dims.n_k)?;
    let AttentionDims { n_q, n_k, d_k, d_v } = dims;
    let phi = config.feature_map;
    let factors = |pos: usize| match horizon {
        Some(m) => position_factors(pos, m),
        None => (1.0, 0.0),
    };

    // Forward sums and the query-side gradients.
    let mut s_cos = vec![0.0f64; d_k * d_v];
    let mut s_sin = vec![0.0f64; d_k * d_v];
    let mut t_cos = vec![0.0f64; d_k];
    let mut t_sin = vec![0.0f64; d_k];
    let absorb = |j: usize, s_cos: &mut [f64], s_sin: &mut [f64], t_cos: &mut [f64], t_sin: &mut [f64]| {
        let (c, s) = factors(j + 1);
        for a in 0..d_k {
            let kp = phi.apply(k.get(j, a).to_f64());
            if kp == 0.0 {
                continue;
            }
            t_cos[a] += kp * c;
            t_sin[a] += kp * s;
            for b in 0..d_v {
                let x = v.get(j, b).to_f64();
                s_cos[a * d_v + b] += kp * c * x;
                s_sin[a * d_v + b] += kp * s * x;
            }
        }
    };

    let mut d_num = vec![0.0f64; n_q * d_v];
    let mut d_den = vec![0.0f64; n_q];
    let mut d_q = vec![0.0f64; n_q * d_k];
    let mut num = vec![0.0f64; d_v];

    if !config.causal {
        for j in 0..n_k {
            absorb(j, &mut s_cos, &mut s_sin, &mut t_cos, &mut t_sin);
        }
    }
    for i in 0..n_q {
        if config.causal {
            absorb(i, &mut s_cos, &mut s_sin, &mut t_cos, &mut t_sin);
        }
        let (c, s) = factors(i + 1);
        num.iter_mut().for_each(|x| *x = 0.0);
        let mut den = 0.0;
        for a in 0..d_k {
            let qp = phi.apply(q.get(i, a).to_f64());
            if qp == 0.0 {
                continue;
            }
            den += qp * (c * t_cos[a] + s * t_sin[a]);
            for b in 0..d_v {
                num[b] += qp * (c * s_cos[a * d_v + b] + s * s_sin[a * d_v + b]);
            }
        }
        let floor_active = den <= config.eps || den.is_nan();
        let denom = den.max(config.eps);
        let g = d_out.row(i);
        let mut g_dot_o = 0.0;
        for b in 0..d_v {
            let gb = g[b].to_f64();
            d_num[i * d_v + b] = gb / denom;
            g_dot_o += gb * num[b] / denom;
        }
        let dd = if floor_active { 0.0 } else { -g_dot_o / denom };
        d_den[i] = dd;
        for a in 0..d_k {
            let x = q.get(i, a).to_f64();
            let gate = phi.derivative(x);
            if gate == 0.0 {
                continue;
            }
            let mut dqc = dd * t_cos[a];
            let mut dqs = dd * t_sin[a];
            for b in 0..d_v {
                let dn = d_num[i * d_v + b];
                dqc += s_cos[a * d_v + b] * dn;
                dqs += s_sin[a * d_v + b] * dn;
            }
            d_q[i * d_k + a] = (c * dqc + s * dqs) * gate;
        }
    }

    // Gradients of the key sums, accumulated over the queries that read
    // them (all queries, or the suffix i >= j when causal).
    let mut g_s_cos = vec![0.0f64; d_k * d_v];
    let mut g_s_sin = vec![0.0f64; d_k * d_v];
    let mut g_t_cos = vec![0.0f64; d_k];
    let mut g_t_sin = vec![0.0f64; d_k];
    let add_query = |i: usize, g_s_cos: &mut [f64], g_s_sin: &mut [f64], g_t_cos: &mut [f64], g_t_sin: &mut [f64]| {
        let (c, s) = factors(i + 1);
        for a in 0..d_k {
            let qp = phi.apply(q.get(i, a).to_f64());
            if qp == 0.0 {
                continue;
            }
            let (qc, qs) = (qp * c, qp * s);
            g_t_cos[a] += d_den[i] * qc;
            g_t_sin[a] += d_den[i] * qs;
            for b in 0..d_v {
                let dn = d_num[i * d_v + b];
                g_s_cos[a * d_v + b] += qc * dn;
                g_s_sin[a * d_v + b] += qs * dn;
            }
        }
    };

    let mut d_k_out = vec![0.0f64; n_k * d_k];
    let mut d_v_out = vec![0.0f64; n_k * d_v];
    if !config.causal {
        for i in 0..n_q {
            add_query(i, &mut g_s_cos, &mut g_s_sin, &mut g_t_cos, &mut g_t_sin);
        }
    }
    for j in (0..n_k).rev() {
        if config.causal {
            add_query(j, &mut g_s_cos, &mut g_s_sin, &mut g_t_cos, &mut g_t_sin);
        }
        let (c, s) = factors(j + 1);
        for a in 0..d_k {
            let x = k.get(j, a).to_f64();
            let kp = phi.apply(x);
            let (kc, ks) = (kp * c, kp * s);
            let mut dkc = g_t_cos[a];
            let mut dks = g_t_sin[a];
            for b in 0..d_v {
                let vb = v.get(j, b).to_f64();
                dkc += g_s_cos[a * d_v + b] * vb;
                dks += g_s_sin[a * d_v + b] * vb;
                d_v_out[j * d_v + b] += kc * g_s_cos[a * d_v + b] + ks * g_s_sin[a * d_v + b];
            }
            let gate = phi.derivative(x);
            d_k_out[j * d_k + a] = (c * dkc + s * dks) * gate;
        }
    }

    let cast = |rows, cols, data: Vec<f64>| Matrix::from_raw(rows, cols, data.into_iter().map(T::from_f64).collect());
    Ok(AttentionGrads {
        d_q: cast(n_q, d_k, d_q),
        d_k: cast(n_k, d_k, d_k_out),
        d_v: cast(n_k, d_v, d_v_out),
    })
}

/// Scalars allocated by [`cosformer_backward`] on top of its inputs.
pub fn cosformer_backward_transient_scalars(n_q: usize, n_k: usize, d_k: usize, d_v: usize) -> usize {
    4 * d_k * d_v + 4 * d_k + n_q * (d_v + 1 + d_k) + d_v + n_k * (d_k + d_v)
}

/// Scalars allocated by [`softmax_backward`] on top of its inputs.
pub fn softmax_backward_transient_scalars(n_q: usize, n_k: usize, d_k: usize, d_v: usize) -> usize {
    n_q * n_k + n_q * d_k + n_k * (d_k + d_v + 1)
}

/// Backward pass of [`softmax_attention`](crate::softmax_attention).
pub fn softmax_backward<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    causal: bool,
    scale: bool,
    d_out: &Matrix<T>,
) -> Result<AttentionGrads<T>> {
    let dims = AttentionDims::of(q, k, v, causal)?;
    check_d_out(d_out, &dims)?;
    let AttentionDims { n_q, n_k, d_k, d_v } = dims;
    let p = softmax_weights(q, k, causal, scale)?;
    let factor = if scale { 1.0 / (d_k as f64).sqrt() } else { 1.0 };

    let mut d_q = vec![0.0f64; n_q * d_k];
    let mut d_k_out = vec![0.0f64; n_k * d_k];
    let mut d_v_out = vec![0.0f64; n_k * d_v];
    let mut d_p = vec![0.0f64; n_k];
    for i in 0..n_q {
        let limit = if causal { i + 1 } else { n_k };
        let g = d_out.row(i);
        let mut weighted = 0.0;
        for j in 0..limit {
            let pij = p.get(i, j);
            let mut dp = 0.0;
            for b in 0..d_v {
                let gb = g[b].to_f64();
                dp += gb * v.get(j, b).to_f64();
                d_v_out[j * d_v + b] += pij * gb;
            }
            d_p[j] = dp;
            weighted += pij * dp;
        }
        for j in 0..limit {
            let ds = p.get(i, j) * (d_p[j] - weighted) * factor;
            if ds == 0.0 {
                continue;
            }
            for a in 0..d_k {
                d_q[i * d_k + a] += ds * k.get(j, a).to_f64();
                d_k_out[j * d_k + a] += ds * q.get(i, a).to_f64();
            }
        }
    }

    let cast = |rows, cols, data: Vec<f64>| Matrix::from_raw(rows, cols, data.into_iter().map(T::from_f64).collect());
    Ok(AttentionGrads {
        d_q: cast(n_q, d_k, d_q),
        d_k: cast(n_k, d_k, d_k_out),
        d_v: cast(n_k, d_v, d_v_out),
    })
}

/// Central differences `(f(x + h e) - f(x - h e)) / 2h` for every
/// coordinate of `x`.
pub fn finite_diff_grad(mut f: impl FnMut(&Matrix<f64>) -> f64, x: &Matrix<f64>, h: f64) -> Matrix<f64> {
    let mut probe = x.clone();
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    for idx in 0..x.as_slice().len() {
        let orig = probe.as_slice()[idx];
        probe.as_mut_slice()[idx] = orig + h;
        let up = f(&probe);
        probe.as_mut_slice()[idx] = orig - h;
        let down = f(&probe);
        probe.as_mut_slice()[idx] = orig;
        grad.as_mut_slice()[idx] = (up - down) / (2.0 * h);
    }
    grad
}

/// `sum(a * b)` over matching entries.
pub fn contract<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x.to_f64() * y.to_f64())
        .sum()
}
