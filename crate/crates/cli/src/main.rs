#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::PipelineConfig;
use crate::output::Failure;

/// Entropy and accuracy-given-entropy modelling for mobile
/// user trajectories.
#[derive(Debug, Parser)]
#[command(name = "mobacc", version, about)]
struct Cli {
    /// Pipeline configuration (TOML, or JSON by extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker thread cap.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic trajectory file.
    Generate(GenerateArgs),
    /// Parse CDR files into a filtered trajectory file.
    Ingest(IngestArgs),
    /// Per-user entropy and prediction accuracy reports.
    Analyze(AnalyzeArgs),
    /// Interval statistics, curve fits and the model file.
    Fit(FitArgs),
    /// Density or probability mass from a model file.
    Eval(EvalArgs),
    /// generate, ingest, analyze, fit and eval in one go.
    RunAll(RunAllArgs),
}

#[derive(Debug, Clone, Args, Default)]
pub struct GeneratorArgs {
    #[arg(long)]
    pub n_users: Option<usize>,
    #[arg(long)]
    pub seq_length: Option<usize>,
    #[arg(long)]
    pub n_locations: Option<usize>,
    #[arg(long)]
    pub rho_min: Option<f64>,
    #[arg(long)]
    pub rho_max: Option<f64>,
    #[arg(long)]
    pub tour_period: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Trajectory file to write [default: <output_dir>/trajectories.csv].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write each user's noise level to this CSV.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[command(flatten)]
    pub generator: GeneratorArgs,
}

#[derive(Debug, Clone, Args, Default)]
pub struct IngestFlags {
    #[arg(long)]
    pub delimiter: Option<char>,
    /// UTC offset such as +08:00.
    #[arg(long)]
    pub timezone: Option<String>,
    /// Input has no header; columns are in the standard 12-field order.
    #[arg(long)]
    pub positional: bool,
    #[arg(long)]
    pub min_active_days: Option<usize>,
    #[arg(long)]
    pub collapse_duplicates: bool,
    /// Keep only records with this ROAM_CITY_ID.
    #[arg(long)]
    pub roam_city: Option<String>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// [default: <output_dir>/trajectories.csv]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// [default: <output_dir>/ingest_summary.json]
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[command(flatten)]
    pub flags: IngestFlags,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum UnseenArg {
    Backoff,
    Miss,
}

#[derive(Debug, Clone, Args, Default)]
pub struct AnalyzeFlags {
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long, value_enum)]
    pub unseen: Option<UnseenArg>,
    /// Train on this leading fraction, test on the rest.
    #[arg(long)]
    pub split: Option<f64>,
    #[arg(long)]
    pub skip_bad_users: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// [default: <output_dir>/trajectories.csv]
    #[arg(long)]
    pub trajectories: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub timezone: Option<String>,
    #[command(flatten)]
    pub flags: AnalyzeFlags,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Fixture {
    /// The nine reference interval (s, mu, sigma) triples.
    Paper9,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SelectionArg {
    MinMse,
    Bic,
}

#[derive(Debug, Clone, Args, Default)]
pub struct FitFlags {
    #[arg(long)]
    pub interval_width: Option<f64>,
    #[arg(long)]
    pub n_intervals: Option<usize>,
    #[arg(long)]
    pub grid_size: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub min_bin_size: Option<usize>,
    #[arg(long, value_enum)]
    pub selection: Option<SelectionArg>,
    /// Weight interval points by user count.
    #[arg(long)]
    pub weighted: bool,
    /// Renormalize the model density to [0, 1].
    #[arg(long)]
    pub truncated: bool,
    #[arg(long)]
    pub dataset_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// [default: <out_dir>/entropy.csv]
    #[arg(long)]
    pub entropy: Option<PathBuf>,
    /// [default: <out_dir>/accuracy.csv]
    #[arg(long)]
    pub accuracy: Option<PathBuf>,
    /// Fit reference values instead of reports.
    #[arg(long, value_enum)]
    pub fixture: Option<Fixture>,
    #[command(flatten)]
    pub flags: FitFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Entropy interval label.
    #[arg(long, allow_negative_numbers = true)]
    pub s: f64,
    /// Accuracy at which to evaluate the density.
    #[arg(long, allow_negative_numbers = true, conflicts_with = "range", required_unless_present = "range")]
    pub x: Option<f64>,
    /// Accuracy range whose probability mass is printed.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    pub range: Option<Vec<f64>>,
    /// Accept any s, not only interval labels.
    #[arg(long)]
    pub extrapolate: bool,
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RunAllArgs {
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub generator: GeneratorArgs,
    #[command(flatten)]
    pub analyze: AnalyzeFlags,
    #[command(flatten)]
    pub fit: FitFlags,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path).map_err(Failure::usage)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(anyhow::anyhow!("cannot start {n} worker threads: {e}")))?;
    }
    match cli.command {
        Command::Generate(args) => commands::generate(&mut config, args),
        Command::Ingest(args) => commands::ingest(&mut config, args),
        Command::Analyze(args) => commands::analyze(&mut config, args),
        Command::Fit(args) => commands::fit(&mut config, args),
        Command::Eval(args) => commands::eval(&mut config, args),
        Command::RunAll(args) => commands::run_all(&mut config, args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
