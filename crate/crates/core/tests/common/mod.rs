#![allow(dead_code)]

use cosformer_core::{Matrix, Scalar};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn<T: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<T> {
    Matrix::from_fn(rows, cols, |_, _| {
        let x: f64 = StandardNormal.sample(rng);
        x
    })
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Row-by-row scalar evaluation of normalized kernel attention with an
/// arbitrary pair weight, written independently of the library kernels.
pub fn naive_kernel_attention(
    q: &Matrix<f64>,
    k: &Matrix<f64>,
    v: &Matrix<f64>,
    phi: impl Fn(f64) -> f64,
    weight: impl Fn(usize, usize) -> f64,
    causal: bool,
    eps: f64,
) -> Matrix<f64> {
    let mut out = Matrix::zeros(q.rows(), v.cols());
    for i in 0..q.rows() {
        let mut num = vec![0.0; v.cols()];
        let mut den = 0.0;
        for j in 0..k.rows() {
            if causal && j > i {
                break;
            }
            let mut s = 0.0;
            for a in 0..q.cols() {
                s += phi(q.get(i, a)) * phi(k.get(j, a));
            }
            s *= weight(i + 1, j + 1);
            den += s;
            for b in 0..v.cols() {
                num[b] += s * v.get(j, b);
            }
        }
        let den = if den > eps { den } else { eps };
        for b in 0..v.cols() {
            out.set(i, b, num[b] / den);
        }
    }
    out
}

pub fn cos_pair(m: usize) -> impl Fn(usize, usize) -> f64 {
    move |i, j| ((i as f64 - j as f64) * std::f64::consts::PI / (2.0 * m as f64)).cos()
}
