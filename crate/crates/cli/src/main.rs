//! `missnet`: impute, generate, score and time from the command line.

mod commands;
mod error;
mod io;
mod network;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use missnet::Hyperparams;

#[derive(Debug, Parser)]
#[command(name = "missnet", version, about = "Missing-value imputation for multivariate time series")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = Hyperparams::default().seed)]
    seed: u64,

    /// Worker threads; 0 lets the runtime decide.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// EM iteration cap per restart.
    #[arg(long, global = true, default_value_t = Hyperparams::default().max_iter)]
    max_iter: usize,

    /// Relative objective change below which EM stops.
    #[arg(long, global = true, default_value_t = Hyperparams::default().tol)]
    tol: f64,

    /// Independent EM runs; the best objective wins.
    #[arg(long, global = true, default_value_t = Hyperparams::default().restarts)]
    restarts: usize,

    /// Log progress to standard error.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fill the missing cells of a CSV file and export regimes and networks.
    Impute(ImputeArgs),
    /// Generate a synthetic dataset with injected missing blocks.
    Synth(SynthArgs),
    /// Score an imputation (and optionally a regime path) against ground truth.
    Eval(EvalArgs),
    /// Time one EM iteration across series lengths.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct ImputeArgs {
    /// Header row of feature names, one row per timestep; empty or NaN cells are missing.
    input: PathBuf,

    #[arg(long, default_value = ".")]
    out_dir: PathBuf,

    #[arg(long, default_value_t = Hyperparams::default().num_regimes)]
    num_regimes: usize,

    #[arg(long, default_value_t = Hyperparams::default().latent_dim)]
    latent_dim: usize,

    /// Weight of the network term against the temporal term, in [0, 1].
    #[arg(long, default_value_t = Hyperparams::default().alpha)]
    alpha: f64,

    /// Sparsity strength of the per-regime networks.
    #[arg(long, default_value_t = Hyperparams::default().lambda)]
    lambda: f64,

    /// Network edges with |partial correlation| at or below this are dropped.
    #[arg(long, default_value_t = 1e-6)]
    edge_threshold: f64,

    /// Also write networks.dot for Graphviz.
    #[arg(long)]
    dot: bool,

    /// Fit on the raw values instead of per-feature z-scores.
    #[arg(long)]
    raw: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PatternArg {
    A,
    B,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NoiseScaleArg {
    Variance,
    Std,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// A: one regime. B: two regimes alternating every switch period.
    #[arg(long, value_enum, ignore_case = true, default_value_t = PatternArg::A)]
    pattern: PatternArg,

    /// Share of entries hidden in random blocks; 0 writes a complete series.
    #[arg(long, default_value_t = 0.2)]
    missing_rate: f64,

    /// Longest missing block as a share of the series length.
    #[arg(long, default_value_t = 0.05)]
    max_block_frac: f64,

    #[arg(long, default_value = ".")]
    out_dir: PathBuf,

    #[arg(long, default_value_t = 1000)]
    len: usize,

    #[arg(long, default_value_t = 50)]
    num_features: usize,

    #[arg(long, default_value_t = 10)]
    latent_dim: usize,

    #[arg(long, default_value_t = 200)]
    switch_period: usize,

    #[arg(long, default_value_t = 0.3)]
    noise_level: f64,

    /// Whether the noise level is a variance or a standard deviation.
    #[arg(long, value_enum, default_value_t = NoiseScaleArg::Variance)]
    noise_scale: NoiseScaleArg,

    /// Drop the linear trend from the latent rows.
    #[arg(long)]
    no_trend: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    truth: PathBuf,

    #[arg(long)]
    imputed: PathBuf,

    /// Observation mask (1 observed, 0 missing). Without --eval-mask, the
    /// missing entries are scored.
    #[arg(long)]
    mask: Option<PathBuf>,

    /// Entries to score (1 scored). Takes precedence over --mask.
    #[arg(long)]
    eval_mask: Option<PathBuf>,

    #[arg(long, requires = "regimes")]
    truth_regimes: Option<PathBuf>,

    #[arg(long, requires = "truth_regimes")]
    regimes: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Comma-separated series lengths.
    #[arg(long, value_delimiter = ',', default_values_t = [1000, 2000, 4000, 8000])]
    lens: Vec<usize>,

    #[arg(long, default_value_t = 50)]
    num_features: usize,

    #[arg(long, default_value_t = 10)]
    latent_dim: usize,

    #[arg(long, default_value_t = 0.2)]
    missing_rate: f64,

    /// Untimed iterations per length before timing starts.
    #[arg(long, default_value_t = 2)]
    warmup: usize,

    /// Timed iterations per length; the median is reported.
    #[arg(long, default_value_t = 5)]
    repeats: usize,

    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.global.verbose {
        log::LevelFilter::Info
    } else {
        log::LevelFilter::Warn
    };
    env_logger::Builder::new().filter_level(level).init();

    if cli.global.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.global.threads)
            .build_global()
        {
            log::warn!("could not size the thread pool: {e}");
        }
    }

    let result = match &cli.command {
        Command::Impute(args) => commands::impute(&cli.global, args),
        Command::Synth(args) => commands::synth(&cli.global, args),
        Command::Eval(args) => commands::eval(args),
        Command::Bench(args) => commands::bench(&cli.global, args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
