//! A single residual transformer block with pluggable attention, plus the
//! token embedding and output projection around it.
//!
//! `h = x + Attn(x W_q, x W_k, x W_v)`, `y = h + relu(h W_1 + b_1) W_2 + b_2`.
//! No normalization layers, so all-zero parameters make the block the
//! identity on `x`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::config::AttentionConfig;
use crate::error::{dim_err, Result};
use crate::grad::{cosformer_backward, softmax_backward, AttentionGrads};
use crate::linear::kernel_attention_linear;
use crate::matrix::Matrix;
use crate::reference::softmax_attention;

/// Which attention mechanism a block uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttentionVariant {
    Softmax { causal: bool, scale: bool },
    /// Linear-cost kernelized attention, with or without re-weighting.
    Kernel(AttentionConfig),
}

impl AttentionVariant {
    pub fn softmax(causal: bool) -> Self {
        AttentionVariant::Softmax { causal, scale: true }
    }

    pub fn cosformer(causal: bool) -> Self {
        AttentionVariant::Kernel(AttentionConfig::cosformer(causal))
    }

    pub fn name(&self) -> String {
        match self {
            AttentionVariant::Softmax { .. } => "softmax".into(),
            AttentionVariant::Kernel(cfg) => match cfg.reweight {
                crate::ReweightScheme::None => format!("linear-{}", cfg.feature_map.name()),
                crate::ReweightScheme::Cosine(_) => "cosformer".into(),
            },
        }
    }

    pub fn forward(&self, q: &Matrix, k: &Matrix, v: &Matrix) -> Result<Matrix> {
        match self {
            AttentionVariant::Softmax { causal, scale } => softmax_attention(q, k, v, *causal, *scale),
            AttentionVariant::Kernel(cfg) => kernel_attention_linear(q, k, v, cfg),
        }
    }

    pub fn backward(&self, q: &Matrix, k: &Matrix, v: &Matrix, d_out: &Matrix) -> Result<AttentionGrads> {
        match self {
            AttentionVariant::Softmax { causal, scale } => softmax_backward(q, k, v, *causal, *scale, d_out),
            AttentionVariant::Kernel(cfg) => cosformer_backward(q, k, v, cfg, d_out),
        }
    }
}

/// Parameters of the toy model. Biases are stored as `1 x width` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub embedding: Matrix,
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_ff1: Matrix,
    pub b_ff1: Matrix,
    pub w_ff2: Matrix,
    pub b_ff2: Matrix,
    pub w_out: Matrix,
    pub b_out: Matrix,
}

impl BlockParams {
    pub fn zeros(vocab: usize, d_model: usize, d_ff: usize) -> Self {
        Self {
            embedding: Matrix::zeros(vocab, d_model),
            w_q: Matrix::zeros(d_model, d_model),
            w_k: Matrix::zeros(d_model, d_model),
            w_v: Matrix::zeros(d_model, d_model),
            w_ff1: Matrix::zeros(d_model, d_ff),
            b_ff1: Matrix::zeros(1, d_ff),
            w_ff2: Matrix::zeros(d_ff, d_model),
            b_ff2: Matrix::zeros(1, d_model),
            w_out: Matrix::zeros(d_model, vocab),
            b_out: Matrix::zeros(1, vocab),
        }
    }

    /// Gaussian initialization scaled by fan-in; the output projection
    /// starts small so initial predictions are close to uniform.
    pub fn init(vocab: usize, d_model: usize, d_ff: usize, rng: &mut impl Rng) -> Self {
        let mut gauss = |rows: usize, cols: usize, std: f64| {
            let dist = Normal::new(0.0, std).expect("positive std");
            Matrix::from_fn(rows, cols, |_, _| dist.sample(rng))
        };
        let fan = |n: usize| 1.0 / (n as f64).sqrt();
        Self {
            embedding: gauss(vocab, d_model, 1.0),
            w_q: gauss(d_model, d_model, fan(d_model)),
            w_k: gauss(d_model, d_model, fan(d_model)),
            w_v: gauss(d_model, d_model, fan(d_model)),
            w_ff1: gauss(d_model, d_ff, fan(d_model)),
            b_ff1: Matrix::zeros(1, d_ff),
            w_ff2: gauss(d_ff, d_model, fan(d_ff)),
            b_ff2: Matrix::zeros(1, d_model),
            w_out: gauss(d_model, vocab, 0.02),
            b_out: Matrix::zeros(1, vocab),
        }
    }

    pub fn d_model(&self) -> usize {
        self.w_q.rows()
    }

    pub fn vocab(&self) -> usize {
        self.embedding.rows()
    }

    /// Every parameter tensor in a fixed order.
    pub fn tensors(&self) -> [&Matrix; 10] {
        [
            &self.embedding,
            &self.w_q,
            &self.w_k,
            &self.w_v,
            &self.w_ff1,
            &self.b_ff1,
            &self.w_ff2,
            &self.b_ff2,
            &self.w_out,
            &self.b_out,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix; 10] {
        [
            &mut self.embedding,
            &mut self.w_q,
            &mut self.w_k,
            &mut self.w_v,
            &mut self.w_ff1,
            &mut self.b_ff1,
            &mut self.w_ff2,
            &mut self.b_ff2,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }

    fn check(&self) -> Result<()> {
        let d = self.d_model();
        let ff = self.w_ff1.cols();
        let ok = self.w_q.shape() == (d, d)
            && self.w_k.shape() == (d, d)
            && self.w_v.shape() == (d, d)
            && self.w_ff1.rows() == d
            && self.b_ff1.shape() == (1, ff)
            && self.w_ff2.shape() == (ff, d)
            && self.b_ff2.shape() == (1, d)
            && self.embedding.cols() == d
            && self.w_out.shape() == (d, self.vocab())
            && self.b_out.shape() == (1, self.vocab());
        if !ok {
            return dim_err("inconsistent block parameter shapes");
        }
        Ok(())
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BlockCache {
    x: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    h: Matrix,
    pre: Matrix,
    act: Matrix,
}

fn add_assign(a: &mut Matrix, b: &Matrix) {
    for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *x += y;
    }
}

fn add_row_bias(a: &mut Matrix, bias: &Matrix) {
    let cols = a.cols();
    for row in a.as_mut_slice().chunks_mut(cols) {
        for (x, b) in row.iter_mut().zip(bias.as_slice()) {
            *x += b;
        }
    }
}

/// `a^T b`.
fn matmul_tn(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.cols(), b.cols());
    for r in 0..a.rows() {
        let br = b.row(r);
        for (i, &x) in a.row(r).iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (o, &y) in out.row_mut(i).iter_mut().zip(br) {
                *o += x * y;
            }
        }
    }
    out
}

/// `a b^T`.
fn matmul_nt(a: &Matrix, b: &Matrix) -> Matrix {
    Matrix::from_fn(a.rows(), b.rows(), |i, j| {
        a.row(i).iter().zip(b.row(j)).map(|(x, y)| x * y).sum()
    })
}

fn column_sums(a: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, a.cols());
    for r in 0..a.rows() {
        for (o, &x) in out.as_mut_slice().iter_mut().zip(a.row(r)) {
            *o += x;
        }
    }
    out
}

/// Forward pass of the block on `x` (`n x d_model`).
pub fn transformer_block_forward(x: &Matrix, params: &BlockParams, variant: &AttentionVariant) -> Result<Matrix> {
    Ok(block_forward_cached(x, params, variant)?.0)
}

pub fn block_forward_cached(
    x: &Matrix,
    params: &BlockParams,
    variant: &AttentionVariant,
) -> Result<(Matrix, BlockCache)> {
    params.check()?;
    if x.cols() != params.d_model() {
        return dim_err(format!(
            "block input width {} does not match d_model {}",
            x.cols(),
            params.d_model()
        ));
    }
    let q = x.matmul(&params.w_q)?;
    let k = x.matmul(&params.w_k)?;
    let v = x.matmul(&params.w_v)?;
    let mut h = variant.forward(&q, &k, &v)?;
    add_assign(&mut h, x);
    let mut pre = h.matmul(&params.w_ff1)?;
    add_row_bias(&mut pre, &params.b_ff1);
    let act = pre.map(|z| z.max(0.0));
    let mut y = act.matmul(&params.w_ff2)?;
    add_row_bias(&mut y, &params.b_ff2);
    add_assign(&mut y, &h);
    let cache = BlockCache {
        x: x.clone(),
        q,
        k,
        v,
        h,
        pre,
        act,
    };
    Ok((y, cache))
}

/// Accumulates block parameter gradients into `grads` and returns `dL/dx`.
pub fn block_backward(
    cache: &BlockCache,
    params: &BlockParams,
    variant: &AttentionVariant,
    d_y: &Matrix,
    grads: &mut BlockParams,
) -> Result<Matrix> {
    add_assign(&mut grads.w_ff2, &matmul_tn(&cache.act, d_y));
    add_assign(&mut grads.b_ff2, &column_sums(d_y));
    let mut d_pre = matmul_nt(d_y, &params.w_ff2);
    for (g, &z) in d_pre.as_mut_slice().iter_mut().zip(cache.pre.as_slice()) {
        if z <= 0.0 {
            *g = 0.0;
        }
    }
    add_assign(&mut grads.w_ff1, &matmul_tn(&cache.h, &d_pre));
    add_assign(&mut grads.b_ff1, &column_sums(&d_pre));
    let mut d_h = matmul_nt(&d_pre, &params.w_ff1);
    add_assign(&mut d_h, d_y);

    let ag = variant.backward(&cache.q, &cache.k, &cache.v, &d_h)?;
    add_assign(&mut grads.w_q, &matmul_tn(&cache.x, &ag.d_q));
    add_assign(&mut grads.w_k, &matmul_tn(&cache.x, &ag.d_k));
    add_assign(&mut grads.w_v, &matmul_tn(&cache.x, &ag.d_v));
    let mut d_x = d_h;
    add_assign(&mut d_x, &matmul_nt(&ag.d_q, &params.w_q));
    add_assign(&mut d_x, &matmul_nt(&ag.d_k, &params.w_k));
    add_assign(&mut d_x, &matmul_nt(&ag.d_v, &params.w_v));
    Ok(d_x)
}

/// Fixed sinusoidal position signal: `sin(p / base^(2i/d))` on even
/// channels and the matching cosine on odd ones, 0-based positions.
pub fn sinusoidal_positions(n: usize, d_model: usize, base: f64) -> Matrix {
    Matrix::from_fn(n, d_model, |p, c| {
        let pair = (c / 2) as f64;
        let freq = base.powf(-2.0 * pair / d_model as f64);
        let angle = p as f64 * freq;
        if c % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Token sequence model: embedding plus fixed positions, one block, and a
/// linear read-out to vocabulary logits.
#[derive(Debug, Clone)]
pub struct TinyModel {
    pub params: BlockParams,
    pub variant: AttentionVariant,
    positions: Matrix,
}

/// Mean cross-entropy and correct-prediction count over scored positions.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SequenceLoss {
    pub loss_sum: f64,
    pub correct: usize,
    pub scored: usize,
}

impl TinyModel {
    pub fn new(params: BlockParams, variant: AttentionVariant, max_len: usize, position_base: f64) -> Self {
        let positions = sinusoidal_positions(max_len, params.d_model(), position_base);
        Self {
            params,
            variant,
            positions,
        }
    }

    fn embed(&self, tokens: &[usize]) -> Result<Matrix> {
        let d = self.params.d_model();
        if tokens.is_empty() || tokens.len() > self.positions.rows() {
            return dim_err(format!(
                "sequence length {} outside 1..={}",
                tokens.len(),
                self.positions.rows()
            ));
        }
        let mut x = Matrix::zeros(tokens.len(), d);
        for (p, &t) in tokens.iter().enumerate() {
            if t >= self.params.vocab() {
                return dim_err(format!("token {t} outside vocabulary"));
            }
            for c in 0..d {
                x.set(p, c, self.params.embedding.get(t, c) + self.positions.get(p, c));
            }
        }
        Ok(x)
    }

    /// Vocabulary logits for every position of `tokens`.
    pub fn logits(&self, tokens: &[usize]) -> Result<Matrix> {
        let x = self.embed(tokens)?;
        let y = transformer_block_forward(&x, &self.params, &self.variant)?;
        let mut logits = y.matmul(&self.params.w_out)?;
        add_row_bias(&mut logits, &self.params.b_out);
        Ok(logits)
    }

    /// Scores next-token predictions at the positions listed in `scored`,
    /// where position `p` should predict `targets[p]`. When `grads` is
    /// given, adds `d(loss_sum)/d(params)` into it.
    pub fn sequence_loss(
        &self,
        tokens: &[usize],
        targets: &[usize],
        scored: &[usize],
        grads: Option<&mut BlockParams>,
    ) -> Result<SequenceLoss> {
        let x = self.embed(tokens)?;
        let (y, cache) = block_forward_cached(&x, &self.params, &self.variant)?;
        let mut logits = y.matmul(&self.params.w_out)?;
        add_row_bias(&mut logits, &self.params.b_out);

        let vocab = self.params.vocab();
        let mut out = SequenceLoss::default();
        let mut d_logits = Matrix::zeros(logits.rows(), vocab);
        for &p in scored {
            let row = logits.row(p);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|&l| (l - max).exp()).sum();
            let target = targets[p];
            out.loss_sum += z.ln() + max - row[target];
            let argmax = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &l)| if l > best.1 { (i, l) } else { best })
                .0;
            if argmax == target {
                out.correct += 1;
            }
            out.scored += 1;
            for (c, g) in d_logits.row_mut(p).iter_mut().enumerate() {
                *g = (row[c] - max).exp() / z - if c == target { 1.0 } else { 0.0 };
            }
        }

        if let Some(grads) = grads {
            add_assign(&mut grads.w_out, &matmul_tn(&y, &d_logits));
            add_assign(&mut grads.b_out, &column_sums(&d_logits));
            let d_y = matmul_nt(&d_logits, &self.params.w_out);
            let d_x = block_backward(&cache, &self.params, &self.variant, &d_y, grads)?;
            for (p, &t) in tokens.iter().enumerate() {
                for (g, &dx) in grads.embedding.row_mut(t).iter_mut().zip(d_x.row(p)) {
                    *g += dx;
                }
            }
        }
        Ok(out)
    }
}
