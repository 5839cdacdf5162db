//! Sequence-length scaling benchmark with analytic memory accounting.
//!
//! Memory is reported as the number of temporary scalars each attention
//! call allocates, computed from buffer sizes rather than measured from the
//! OS:
//!
//! | variant            | forward                                   |
//! |--------------------|-------------------------------------------|
//! | `softmax`          | `n^2 + n d + d`                           |
//! | `kernel-quadratic` | `2 n d + n^2 + n d + d`                   |
//! | `linear`           | `n d + d^2 + 2 d`                         |
//! | `cosformer`        | `n d + 2 d^2 + 3 d`                       |
//!
//! Train mode adds the backward buffers of the variant.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use cosformer_core::grad::{
    cosformer_backward, cosformer_backward_transient_scalars, softmax_backward,
    softmax_backward_transient_scalars,
};
use cosformer_core::linear::{cosformer_transient_scalars, linear_transient_scalars};
use cosformer_core::reference::{kernel_quadratic_transient_scalars, softmax_transient_scalars};
use cosformer_core::{
    cosformer_attention, kernel_attention_quadratic, linear_attention, softmax_attention,
    AttentionConfig, FeatureMapKind, Matrix, Scalar,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::equivalence::{random_matrix, Precision};
use crate::error::{HarnessError, Result};

pub const CSV_HEADER: &str = "variant,seq_len,d_model,repeats,mean_s,std_s,median_s,transient_scalars,mode";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchVariant {
    Softmax,
    KernelQuadratic,
    Linear,
    Cosformer,
}

impl BenchVariant {
    pub const ALL: [BenchVariant; 4] = [
        BenchVariant::Softmax,
        BenchVariant::KernelQuadratic,
        BenchVariant::Linear,
        BenchVariant::Cosformer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchVariant::Softmax => "softmax",
            BenchVariant::KernelQuadratic => "kernel-quadratic",
            BenchVariant::Linear => "linear",
            BenchVariant::Cosformer => "cosformer",
        }
    }

    /// Analytic temporary-scalar count for one call at self-attention
    /// length `n` with `d_k = d_v = d`.
    pub fn transient_scalars(self, n: usize, d: usize, mode: Mode) -> Option<usize> {
        let forward = match self {
            BenchVariant::Softmax => softmax_transient_scalars(n, n, d),
            BenchVariant::KernelQuadratic => kernel_quadratic_transient_scalars(n, n, d, d),
            BenchVariant::Linear => linear_transient_scalars(n, d, d),
            BenchVariant::Cosformer => cosformer_transient_scalars(n, d, d),
        };
        match mode {
            Mode::Inference => Some(forward),
            Mode::Train => match self {
                BenchVariant::Softmax => Some(forward + softmax_backward_transient_scalars(n, n, d, d)),
                BenchVariant::Linear | BenchVariant::Cosformer => {
                    Some(forward + cosformer_backward_transient_scalars(n, n, d, d))
                }
                BenchVariant::KernelQuadratic => None,
            },
        }
    }
}

impl FromStr for BenchVariant {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        BenchVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| HarnessError::Usage(format!("unknown benchmark variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Forward only.
    Inference,
    /// Forward and backward.
    Train,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Inference => "inference",
            Mode::Train => "train",
        }
    }
}

impl FromStr for Mode {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inference" => Ok(Mode::Inference),
            "train" => Ok(Mode::Train),
            other => Err(HarnessError::Usage(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRecord {
    pub variant: String,
    pub seq_len: usize,
    pub d_model: usize,
    pub repeats: usize,
    pub mean_seconds: f64,
    pub std_seconds: f64,
    pub median_seconds: f64,
    pub transient_scalars: usize,
    pub mode: Mode,
}

/// One benchmark cell: a timing, or a cell skipped because it would not
/// fit in the memory budget.
#[derive(Debug, Clone, PartialEq)]
pub enum BenchCell {
    Measured(BenchmarkRecord),
    OutOfMemory {
        variant: String,
        seq_len: usize,
        d_model: usize,
        transient_scalars: usize,
        mode: Mode,
    },
}

impl BenchCell {
    pub fn record(&self) -> Option<&BenchmarkRecord> {
        match self {
            BenchCell::Measured(r) => Some(r),
            BenchCell::OutOfMemory { .. } => None,
        }
    }
}

impl fmt::Display for BenchCell {
    /// One CSV row; out-of-memory cells carry `x` in the timing columns.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BenchCell::Measured(r) => write!(
                f,
                "{},{},{},{},{:.9e},{:.9e},{:.9e},{},{}",
                r.variant,
                r.seq_len,
                r.d_model,
                r.repeats,
                r.mean_seconds,
                r.std_seconds,
                r.median_seconds,
                r.transient_scalars,
                r.mode.name()
            ),
            BenchCell::OutOfMemory {
                variant,
                seq_len,
                d_model,
                transient_scalars,
                mode,
            } => write!(
                f,
                "{variant},{seq_len},{d_model},0,x,x,x,{transient_scalars},{}",
                mode.name()
            ),
        }
    }
}

pub fn to_csv(cells: &[BenchCell]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for c in cells {
        out.push_str(&c.to_string());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub variants: Vec<BenchVariant>,
    pub lengths: Vec<usize>,
    pub d_model: usize,
    pub repeats: usize,
    pub mode: Mode,
    pub causal: bool,
    pub seed: u64,
    pub precision: Precision,
    /// Cells whose transient count exceeds this are recorded as out of
    /// memory instead of run.
    pub memory_budget_scalars: usize,
}

impl BenchOptions {
    pub fn new(variants: Vec<BenchVariant>, lengths: Vec<usize>, d_model: usize) -> Self {
        Self {
            variants,
            lengths,
            d_model,
            repeats: 5,
            mode: Mode::Inference,
            causal: false,
            seed: 0,
            precision: Precision::Standard,
            memory_budget_scalars: 1 << 28,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.repeats < 3 {
            return Err(HarnessError::Usage(format!("repeats must be at least 3, got {}", self.repeats)));
        }
        if self.d_model == 0 || self.lengths.is_empty() || self.lengths.contains(&0) {
            return Err(HarnessError::Usage("lengths and d_model must be positive".into()));
        }
        if self.lengths.windows(2).any(|w| w[0] > w[1]) {
            return Err(HarnessError::Usage("lengths must be sorted ascending".into()));
        }
        if self.mode == Mode::Train {
            if let Some(v) = self.variants.iter().find(|v| v.transient_scalars(1, 1, Mode::Train).is_none()) {
                return Err(HarnessError::Usage(format!("{} has no backward pass", v.name())));
            }
        }
        Ok(())
    }
}

/// Benchmark inputs for one length: identical for every variant.
pub fn bench_inputs<T: Scalar>(seed: u64, n: usize, d: usize) -> [Matrix<T>; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(n as u64);
    [
        random_matrix(&mut rng, n, d),
        random_matrix(&mut rng, n, d),
        random_matrix(&mut rng, n, d),
        random_matrix(&mut rng, n, d),
    ]
}

fn run_once<T: Scalar>(variant: BenchVariant, inputs: &[Matrix<T>; 4], mode: Mode, causal: bool) -> Result<()> {
    let [q, k, v, d_out] = inputs;
    let cos_cfg = AttentionConfig::cosformer(causal);
    let lin_cfg = AttentionConfig::linear(FeatureMapKind::Relu, causal);
    let out = match variant {
        BenchVariant::Softmax => softmax_attention(q, k, v, causal, true)?,
        BenchVariant::KernelQuadratic => kernel_attention_quadratic(q, k, v, &lin_cfg)?,
        BenchVariant::Linear => linear_attention(q, k, v, FeatureMapKind::Relu, causal, lin_cfg.eps)?,
        BenchVariant::Cosformer => cosformer_attention(q, k, v, &cos_cfg)?,
    };
    std::hint::black_box(&out);
    if mode == Mode::Train {
        let grads = match variant {
            BenchVariant::Softmax => softmax_backward(q, k, v, causal, true, d_out)?,
            BenchVariant::Linear => cosformer_backward(q, k, v, &lin_cfg, d_out)?,
            BenchVariant::Cosformer => cosformer_backward(q, k, v, &cos_cfg, d_out)?,
            BenchVariant::KernelQuadratic => unreachable!("rejected by validate"),
        };
        std::hint::black_box(&grads);
    }
    Ok(())
}

fn summarize(times: &[f64]) -> (f64, f64, f64) {
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len().is_multiple_of(2) {
        0.5 * (sorted[mid - 1] + sorted[mid])
    } else {
        sorted[mid]
    };
    (mean, var.sqrt(), median)
}

fn measure<T: Scalar>(variant: BenchVariant, n: usize, opts: &BenchOptions) -> Result<BenchCell> {
    let d = opts.d_model;
    let transient = variant
        .transient_scalars(n, d, opts.mode)
        .expect("mode validated");
    if transient > opts.memory_budget_scalars {
        return Ok(BenchCell::OutOfMemory {
            variant: variant.name().into(),
            seq_len: n,
            d_model: d,
            transient_scalars: transient,
            mode: opts.mode,
        });
    }
    let inputs = bench_inputs::<T>(opts.seed, n, d);
    run_once(variant, &inputs, opts.mode, opts.causal)?;
    let mut times = Vec::with_capacity(opts.repeats);
    for _ in 0..opts.repeats {
        let start = Instant::now();
        run_once(variant, &inputs, opts.mode, opts.causal)?;
        // Instant has nanosecond granularity; keep strictly positive
        times.push(start.elapsed().as_secs_f64().max(1e-9));
    }
    let (mean, std, median) = summarize(&times);
    Ok(BenchCell::Measured(BenchmarkRecord {
        variant: variant.name().into(),
        seq_len: n,
        d_model: d,
        repeats: opts.repeats,
        mean_seconds: mean,
        std_seconds: std,
        median_seconds: median,
        transient_scalars: transient,
        mode: opts.mode,
    }))
}

/// Times every (variant, length) pair in order.
pub fn run_benchmark(opts: &BenchOptions) -> Result<Vec<BenchCell>> {
    opts.validate()?;
    let mut cells = Vec::new();
    for &variant in &opts.variants {
        for &n in &opts.lengths {
            let cell = match opts.precision {
                Precision::Standard => measure::<f32>(variant, n, opts)?,
                Precision::Wide => measure::<f64>(variant, n, opts)?,
            };
            cells.push(cell);
        }
    }
    Ok(cells)
}
