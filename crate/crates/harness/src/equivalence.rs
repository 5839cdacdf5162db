//! Randomized comparison of every linear attention against its quadratic
//! oracle.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use cosformer_core::linear::{cosformer_attention_mutated, CausalState, Mutation};
use cosformer_core::{
    kernel_attention_quadratic, linear_attention, AttentionConfig, FeatureMapKind, Matrix, Scalar,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::HarnessError;

/// Storage precision of the compared matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    /// `f32` storage.
    Standard,
    /// `f64` storage.
    Wide,
}

impl Precision {
    /// Tolerance for linear-vs-quadratic comparisons.
    pub fn equivalence_tolerance(self) -> f64 {
        match self {
            Precision::Standard => 1e-5,
            Precision::Wide => 1e-10,
        }
    }

    /// Tolerance for streaming-vs-batch comparisons.
    pub fn streaming_tolerance(self) -> f64 {
        match self {
            Precision::Standard => 1e-5,
            Precision::Wide => 1e-12,
        }
    }
}

impl FromStr for Precision {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standard" => Ok(Precision::Standard),
            "wide" => Ok(Precision::Wide),
            other => Err(HarnessError::Usage(format!("unknown precision {other:?}"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::Standard => "standard",
            Precision::Wide => "wide",
        })
    }
}

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub seed: u64,
    pub trials: usize,
    pub precision: Precision,
    pub max_len: usize,
    pub max_dim: usize,
    pub mutation: Mutation,
    /// Run trials on the rayon pool. Results are identical to the serial run.
    pub parallel: bool,
}

impl SuiteOptions {
    pub fn new(seed: u64, trials: usize, precision: Precision) -> Self {
        Self {
            seed,
            trials,
            precision,
            max_len: 128,
            max_dim: 32,
            mutation: Mutation::None,
            parallel: false,
        }
    }
}

/// Worst error seen for one compared operation.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantResult {
    pub name: &'static str,
    pub cases: usize,
    /// NaN when any comparison produced a non-finite value.
    pub max_rel_err: f64,
    pub worst_trial: Option<usize>,
    pub tolerance: f64,
}

impl VariantResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub seed: u64,
    pub trials: usize,
    pub precision: Precision,
    pub mutation: Mutation,
    pub variants: Vec<VariantResult>,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.variants.iter().all(VariantResult::passed)
    }

    pub fn variant(&self, name: &str) -> Option<&VariantResult> {
        self.variants.iter().find(|v| v.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,precision,cases,max_rel_err,tolerance,passed\n");
        for v in &self.variants {
            out.push_str(&format!(
                "{},{},{},{:e},{:e},{}\n",
                v.name,
                self.precision,
                v.cases,
                v.max_rel_err,
                v.tolerance,
                v.passed()
            ));
        }
        out
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "equivalence suite: seed={} trials={} precision={} mutation={} ({:.2?})",
            self.seed,
            self.trials,
            self.precision,
            self.mutation.name(),
            self.elapsed
        )?;
        for v in &self.variants {
            writeln!(
                f,
                "  {:<18} {:>5} cases  max_rel_err={:<12.3e} tol={:.0e}  {}",
                v.name,
                v.cases,
                v.max_rel_err,
                v.tolerance,
                if v.passed() { "PASS" } else { "FAIL" }
            )?;
        }
        write!(f, "{}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

const VARIANTS: [&str; 6] = [
    "cosformer",
    "cosformer-causal",
    "cosformer-cross",
    "linear-relu",
    "linear-elu",
    "streaming",
];

/// Random shapes and flags of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialShape {
    pub n: usize,
    pub n_cross: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub causal: bool,
    /// Horizon `2n` instead of `n`.
    pub double_horizon: bool,
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

pub fn sample_shape(rng: &mut impl Rng, max_len: usize, max_dim: usize) -> TrialShape {
    TrialShape {
        n: rng.random_range(1..=max_len),
        n_cross: rng.random_range(1..=max_len),
        d_k: rng.random_range(1..=max_dim),
        d_v: rng.random_range(1..=max_dim),
        causal: rng.random_bool(0.5),
        double_horizon: rng.random_bool(0.5),
    }
}

pub fn random_matrix<T: Scalar>(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix<T> {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Per-variant errors of one trial, in [`VARIANTS`] order; `None` where the
/// variant does not apply.
type TrialErrors = [Option<f64>; 6];

fn run_trial<T: Scalar>(opts: &SuiteOptions, trial: usize) -> TrialErrors {
    let mut rng = trial_rng(opts.seed, trial);
    let shape = sample_shape(&mut rng, opts.max_len, opts.max_dim);
    let TrialShape { n, d_k, d_v, causal, .. } = shape;
    let q: Matrix<T> = random_matrix(&mut rng, n, d_k);
    let k: Matrix<T> = random_matrix(&mut rng, n, d_k);
    let v: Matrix<T> = random_matrix(&mut rng, n, d_v);
    let m = if shape.double_horizon { 2 * n } else { n };
    let mut errs: TrialErrors = [None; 6];

    let cfg = AttentionConfig::cosformer(causal).with_horizon(m);
    let lin = cosformer_attention_mutated(&q, &k, &v, &cfg, opts.mutation).expect("valid trial");
    let quad = kernel_attention_quadratic(&q, &k, &v, &cfg).expect("valid trial");
    errs[if causal { 1 } else { 0 }] = Some(lin.rel_err(&quad));

    if !causal {
        let nc = shape.n_cross;
        let kc: Matrix<T> = random_matrix(&mut rng, nc, d_k);
        let vc: Matrix<T> = random_matrix(&mut rng, nc, d_v);
        let cfg = AttentionConfig::cosformer(false).with_horizon(n.max(nc));
        let lin = cosformer_attention_mutated(&q, &kc, &vc, &cfg, opts.mutation).expect("valid trial");
        let quad = kernel_attention_quadratic(&q, &kc, &vc, &cfg).expect("valid trial");
        errs[2] = Some(lin.rel_err(&quad));
    }

    for (slot, map) in [(3, FeatureMapKind::Relu), (4, FeatureMapKind::EluPlusOne)] {
        let cfg = AttentionConfig::linear(map, causal);
        let lin = linear_attention(&q, &k, &v, map, causal, cfg.eps).expect("valid trial");
        let quad = kernel_attention_quadratic(&q, &k, &v, &cfg).expect("valid trial");
        errs[slot] = Some(lin.rel_err(&quad));
    }

    let cfg = AttentionConfig::cosformer(true).with_horizon(m);
    let batch = cosformer_attention_mutated(&q, &k, &v, &cfg, opts.mutation).expect("valid trial");
    let mut state = CausalState::new(d_k, d_v);
    let mut streamed = Vec::with_capacity(n * d_v);
    for t in 0..n {
        let row = state.step(q.row(t), k.row(t), v.row(t), m, cfg.eps).expect("valid step");
        streamed.extend(row);
    }
    let streamed = Matrix::new(n, d_v, streamed);
    errs[5] = Some(match streamed {
        Ok(s) => s.rel_err(&batch),
        Err(_) => f64::NAN,
    });
    errs
}

/// Runs `opts.trials` seeded trials and reports the worst relative error of
/// each variant. Failures are reported, never raised.
pub fn run_equivalence_suite(opts: &SuiteOptions) -> SuiteReport {
    let start = Instant::now();
    let trial = |t: usize| match opts.precision {
        Precision::Standard => run_trial::<f32>(opts, t),
        Precision::Wide => run_trial::<f64>(opts, t),
    };
    let per_trial: Vec<TrialErrors> = if opts.parallel {
        (0..opts.trials).into_par_iter().map(trial).collect()
    } else {
        (0..opts.trials).map(trial).collect()
    };

    let variants = VARIANTS
        .iter()
        .enumerate()
        .map(|(slot, &name)| {
            let tolerance = if name == "streaming" {
                opts.precision.streaming_tolerance()
            } else {
                opts.precision.equivalence_tolerance()
            };
            let mut result = VariantResult {
                name,
                cases: 0,
                max_rel_err: 0.0,
                worst_trial: None,
                tolerance,
            };
            for (t, errs) in per_trial.iter().enumerate() {
                let Some(e) = errs[slot] else { continue };
                result.cases += 1;
                if result.max_rel_err.is_nan() {
                    continue;
                }
                if e.is_nan() || e > result.max_rel_err {
                    result.max_rel_err = e;
                    result.worst_trial = Some(t);
                }
            }
            result
        })
        .collect();

    SuiteReport {
        seed: opts.seed,
        trials: opts.trials,
        precision: opts.precision,
        mutation: opts.mutation,
        variants,
        elapsed: start.elapsed(),
    }
}
