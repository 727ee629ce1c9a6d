//! `hmem`: profile traces, estimate hybrid-memory behaviour analytically,
//! and check the estimates against the built-in simulator.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hybridmem::cache::DEFAULT_CACHE_BYTES;
use hybridmem::metrics::DEFAULT_PAGEFACTOR;
use hybridmem::trace::DEFAULT_PAGE_SIZE_LOG2;
use hybridmem::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_INPUT: u8 = 3;
const EXIT_SOLVER: u8 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "hmem",
    version,
    about = "Hybrid DRAM-NVM memory estimator and simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic Zipf trace.
    Gen(GenArgs),
    /// Profile a trace into its sequence histogram.
    Profile(ProfileArgs),
    /// Estimate hit ratio, AMAT and NVM writes analytically.
    Estimate(EstimateArgs),
    /// Run the trace through the simulator.
    Simulate(SimulateArgs),
    /// Estimate and simulate the same configuration and report the errors.
    Compare(EstimateArgs),
    /// Estimate a grid of thresholds, migration probabilities or sizes.
    Sweep(SweepArgs),
    /// Show what a cache directory holds and how it has been used.
    CacheStats(CacheStatsArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum RouteArg {
    Numeric,
    Exact,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, default_value_t = 100_000)]
    pub accesses: usize,
    #[arg(long, default_value_t = 10_000)]
    pub pages: u64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    pub write_ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TraceArgs {
    /// Text trace, optionally gzip-compressed (`.gz`).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Page size as a power of two.
    #[arg(long, default_value_t = DEFAULT_PAGE_SIZE_LOG2)]
    pub page_size_log2: u32,
}

#[derive(Args, Debug)]
pub struct ProfileArgs {
    #[command(flatten)]
    pub input: TraceArgs,
    /// Where to save the profile; stdout when omitted.
    #[arg(long)]
    pub profile_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PolicyArgs {
    /// `two-lru`, `clock-dwf`, or a JSON policy file.
    #[arg(long, default_value = "two-lru")]
    pub policy: String,
    /// TwoLRU migration threshold.
    #[arg(long)]
    pub threshold: Option<u32>,
    /// Overrides the policy's migration probability.
    #[arg(long)]
    pub p_mig: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    /// Saved profile to use instead of profiling `--trace`.
    #[arg(long)]
    pub profile_in: Option<PathBuf>,
    /// Also save the profile computed from `--trace`.
    #[arg(long)]
    pub profile_out: Option<PathBuf>,
    /// JSON file with `dram_read_ns`, `dram_write_ns`, `nvm_read_ns`,
    /// `nvm_write_ns` and `disk_read_ns`.
    #[arg(long)]
    pub latencies: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PAGEFACTOR)]
    pub pagefactor: u64,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Byte budget of the cache directory.
    #[arg(long, default_value_t = DEFAULT_CACHE_BYTES)]
    pub cache_bytes: u64,
    #[arg(long)]
    pub no_cache: bool,
    #[arg(long, value_enum, default_value_t = RouteArg::Numeric)]
    pub route: RouteArg,
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub input: TraceArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[arg(long)]
    pub dram_pages: u64,
    #[arg(long)]
    pub nvm_pages: u64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Output file; stdout when omitted.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub input: TraceArgs,
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[arg(long)]
    pub dram_pages: u64,
    #[arg(long)]
    pub nvm_pages: u64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Output file; stdout when omitted.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub input: TraceArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub policy: PolicyArgs,
    /// TwoLRU thresholds, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Vec<u32>,
    /// Migration probabilities, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub p_migs: Vec<f64>,
    /// Memory sizes as `dram%:nvm%` of the working set, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Vec<String>,
    /// Fixed sizes, used when `--sizes` is not given.
    #[arg(long)]
    pub dram_pages: Option<u64>,
    #[arg(long)]
    pub nvm_pages: Option<u64>,
    /// Points estimated concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Also simulate every point and time it.
    #[arg(long)]
    pub simulate: bool,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CacheStatsArgs {
    #[arg(long)]
    pub cache_dir: PathBuf,
}

/// A problem with the command line rather than its inputs.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::NoConvergence { .. } | Error::Invariant(_) | Error::ZeroReference) => {
            EXIT_SOLVER
        }
        Some(Error::Argument(_)) => EXIT_USAGE,
        _ => EXIT_INPUT,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
