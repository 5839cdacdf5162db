use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cosformer_core::linear::Mutation;
use cosformer_core::model::AttentionVariant;
use cosformer_core::train::{train_copy_task_with, TrainConfig};
use cosformer_core::{attention_weights_quadratic, build_reweight_matrix, softmax_weights, AttentionConfig, FeatureMapKind, Matrix};
use cosformer_harness::bench::{run_benchmark, to_csv, BenchOptions, BenchVariant, Mode};
use cosformer_harness::equivalence::{random_matrix, run_equivalence_suite, Precision, SuiteOptions};
use cosformer_harness::io::{read_matrix, write_pgm, write_pgm_values};
use cosformer_harness::viz::visualize_attention;
use cosformer_harness::{HarnessError, Result, EXIT_SUITE_FAILURE};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "cosformer", version, about = "Linear attention with cosine re-weighting: checks, benchmarks, heatmaps, toy training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write results here as CSV (PGM for `viz`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PrecisionArg::Wide)]
    precision: PrecisionArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    Standard,
    Wide,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::Standard => Precision::Standard,
            PrecisionArg::Wide => Precision::Wide,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MutationArg {
    None,
    PositionOffByOne,
    DropSin,
    NoFloor,
}

impl From<MutationArg> for Mutation {
    fn from(m: MutationArg) -> Self {
        match m {
            MutationArg::None => Mutation::None,
            MutationArg::PositionOffByOne => Mutation::PositionOffByOne,
            MutationArg::DropSin => Mutation::DropSinBranch,
            MutationArg::NoFloor => Mutation::NoDenominatorFloor,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VizVariant {
    Softmax,
    Cosformer,
    Relu,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainVariant {
    Cosformer,
    Softmax,
}

#[derive(Subcommand)]
enum Command {
    /// Compare every linear attention with its quadratic oracle.
    Check {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        /// Run trials in parallel.
        #[arg(long)]
        parallel: bool,
        /// Inject a fault into the cosine forward.
        #[arg(long, value_enum, default_value_t = MutationArg::None)]
        mutation: MutationArg,
    },
    /// Time attention variants across sequence lengths.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "softmax,linear,cosformer")]
        variants: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "512,1024,2048,4096")]
        lengths: Vec<usize>,
        #[arg(long, default_value_t = 64)]
        d_model: usize,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        /// inference (forward) or train (forward + backward).
        #[arg(long, default_value = "inference")]
        mode: String,
        #[arg(long)]
        causal: bool,
        /// Cells needing more temporary scalars than this are marked out of memory.
        #[arg(long, default_value_t = 1 << 28)]
        memory_budget: usize,
    },
    /// Coverage heatmap of attention matrices.
    Viz {
        #[command(flatten)]
        common: Common,
        /// Row-stochastic matrix files; random attention maps are generated when absent.
        #[arg(long, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.9)]
        threshold: f64,
        #[arg(long, value_enum, default_value_t = VizVariant::Cosformer)]
        variant: VizVariant,
        #[arg(long, default_value_t = 64)]
        seq_len: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long)]
        causal: bool,
        /// Also write the cosine distance matrix as a PGM.
        #[arg(long)]
        distance_out: Option<PathBuf>,
    },
    /// Train the one-block model on the delimiter copy task.
    TrainToy {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = TrainVariant::Cosformer)]
        variant: TrainVariant,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
    },
}

fn write_out(path: &Option<PathBuf>, text: &str) -> Result<()> {
    if let Some(p) = path {
        fs::write(p, text).map_err(|e| HarnessError::Io {
            path: p.clone(),
            source: e,
        })?;
    }
    Ok(())
}

fn generated_maps(variant: VizVariant, n: usize, d: usize, count: usize, causal: bool, seed: u64) -> Result<Vec<Matrix>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut maps = Vec::with_capacity(count);
    for _ in 0..count {
        let q: Matrix = random_matrix(&mut rng, n, d);
        let k: Matrix = random_matrix(&mut rng, n, d);
        let w = match variant {
            VizVariant::Softmax => softmax_weights(&q, &k, causal, true)?,
            VizVariant::Cosformer => attention_weights_quadratic(&q, &k, &AttentionConfig::cosformer(causal))?,
            VizVariant::Relu => attention_weights_quadratic(&q, &k, &AttentionConfig::linear(FeatureMapKind::Relu, causal))?,
        };
        maps.push(w);
    }
    Ok(maps)
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Check {
            common,
            trials,
            parallel,
            mutation,
        } => {
            if trials == 0 {
                return Err(HarnessError::Usage("trials must be at least 1".into()));
            }
            let mut opts = SuiteOptions::new(common.seed, trials, common.precision.into());
            opts.parallel = parallel;
            opts.mutation = mutation.into();
            let report = run_equivalence_suite(&opts);
            println!("{report}");
            write_out(&common.out, &report.to_csv())?;
            Ok(if report.passed() { 0 } else { EXIT_SUITE_FAILURE })
        }
        Command::Bench {
            common,
            variants,
            lengths,
            d_model,
            repeats,
            mode,
            causal,
            memory_budget,
        } => {
            let variants = variants.iter().map(|v| v.parse()).collect::<Result<Vec<BenchVariant>>>()?;
            let mut opts = BenchOptions::new(variants, lengths, d_model);
            opts.repeats = repeats;
            opts.mode = mode.parse::<Mode>()?;
            opts.causal = causal;
            opts.seed = common.seed;
            opts.precision = common.precision.into();
            opts.memory_budget_scalars = memory_budget;
            let cells = run_benchmark(&opts)?;
            let csv = to_csv(&cells);
            print!("{csv}");
            write_out(&common.out, &csv)?;
            Ok(0)
        }
        Command::Viz {
            common,
            input,
            threshold,
            variant,
            seq_len,
            dim,
            count,
            causal,
            distance_out,
        } => {
            let maps = if input.is_empty() {
                if seq_len == 0 || dim == 0 {
                    return Err(HarnessError::Usage("seq-len and dim must be positive".into()));
                }
                generated_maps(variant, seq_len, dim, count, causal, common.seed)?
            } else {
                input.iter().map(read_matrix).collect::<Result<Vec<_>>>()?
            };
            let cov = visualize_attention(&maps, threshold)?;
            let mean = cov.values.iter().sum::<f64>() / cov.values.len() as f64;
            println!(
                "coverage {}x{} over {} matrices, threshold {}, mean coverage {:.4}",
                cov.size, cov.size, cov.n_matrices, cov.threshold, mean
            );
            if let Some(p) = &common.out {
                write_pgm(&cov, p)?;
            }
            if let Some(p) = &distance_out {
                let n = cov.size;
                let w = build_reweight_matrix(n, n, n)?;
                write_pgm_values(w.as_slice(), n, n, p)?;
            }
            Ok(0)
        }
        Command::TrainToy { common, variant, steps } => {
            let variant = match variant {
                TrainVariant::Cosformer => AttentionVariant::cosformer(true),
                TrainVariant::Softmax => AttentionVariant::softmax(true),
            };
            let cfg = TrainConfig {
                steps,
                ..TrainConfig::default()
            };
            let report = train_copy_task_with(variant, common.seed, &cfg)?;
            println!("{}", report.summary());
            write_out(&common.out, &report.to_csv())?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
