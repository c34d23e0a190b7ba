mod commands;
mod config;
mod lookup;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "lfi", version, about = "Explain matrix-factorization recommenders through metadata shadow models")]
pub struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Master seed; overrides any seed in a config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Print progress lines to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Fit an ALS factor model to a ratings file.
    Train(TrainArgs),
    /// Fit a metadata shadow model to a trained factor model.
    Shadow(ShadowArgs),
    /// Explain a user's recommendation(s) by feature influence.
    Explain(ExplainArgs),
    /// Sweep recommender and shadow settings, reporting agreement.
    Sweep(SweepArgs),
    /// Run the synthetic-preference hypothesis experiment.
    Synth(SynthArgs),
}

#[derive(Args, Default)]
pub struct RatingsInput {
    /// Ratings file: user,item,rating[,timestamp].
    #[arg(long)]
    pub ratings: Option<PathBuf>,
    /// Field delimiter of the ratings file.
    #[arg(long)]
    pub delimiter: Option<char>,
    /// The ratings file has no header line.
    #[arg(long)]
    pub no_header: bool,
    /// Lowest valid rating.
    #[arg(long, allow_hyphen_values = true)]
    pub scale_low: Option<f64>,
    /// Highest valid rating.
    #[arg(long, allow_hyphen_values = true)]
    pub scale_high: Option<f64>,
}

#[derive(Args, Default)]
pub struct FeatureArgs {
    /// Keep features with at least this entropy in bits.
    #[arg(long, conflicts_with_all = ["top_entropy", "min_support"])]
    pub min_entropy: Option<f64>,
    /// Keep only the N highest-entropy features.
    #[arg(long, conflicts_with = "min_support")]
    pub top_entropy: Option<usize>,
    /// Keep features held by at least N items.
    #[arg(long)]
    pub min_support: Option<usize>,
    /// Items with fewer features than this are left out of shadow training.
    #[arg(long)]
    pub min_features: Option<usize>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: RatingsInput,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Maximum ALS iterations.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Where to write the model.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// TOML file supplying any of the above.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Linear,
    Tree,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScopeArg {
    Eval,
    Train,
    All,
}

#[derive(Args)]
pub struct ShadowArgs {
    /// Factor model written by `train`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Item metadata, one JSON record per line.
    #[arg(long)]
    pub metadata: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    /// Tree depth (tree only).
    #[arg(long)]
    pub depth: Option<usize>,
    /// Threshold bins per feature (tree only).
    #[arg(long)]
    pub bins: Option<usize>,
    /// Minimum items per leaf (tree only).
    #[arg(long)]
    pub min_leaf: Option<usize>,
    /// Ridge penalty (linear only).
    #[arg(long)]
    pub ridge: Option<f64>,
    /// Fraction of items used for fitting.
    #[arg(long)]
    pub split: Option<f64>,
    /// Item set agreement is measured on.
    #[arg(long, value_enum)]
    pub scope: Option<ScopeArg>,
    #[command(flatten)]
    pub features: FeatureArgs,
    /// Where to write the shadow model.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the agreement report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Exact,
    MonteCarlo,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AggregationArg {
    Mean,
    MeanAbsolute,
}

#[derive(Args)]
pub struct ExplainArgs {
    /// Shadow model written by `shadow`.
    #[arg(long)]
    pub shadow: PathBuf,
    /// The metadata file the shadow model was trained with.
    #[arg(long)]
    pub metadata: PathBuf,
    /// External user id.
    #[arg(long)]
    pub user: String,
    /// External item id to explain.
    #[arg(long, conflicts_with = "user_aggregate", required_unless_present = "user_aggregate")]
    pub item: Option<String>,
    /// Explain the user's predictions over all shadow items.
    #[arg(long)]
    pub user_aggregate: bool,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    #[arg(long, value_enum, default_value_t = EstimatorArg::Exact)]
    pub estimator: EstimatorArg,
    /// Samples per feature for the Monte-Carlo estimator.
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    /// How per-item influences combine with --user-aggregate.
    #[arg(long, value_enum, default_value_t = AggregationArg::Mean)]
    pub aggregation: AggregationArg,
    /// Write a bar chart of the listed influences.
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Write the report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub input: RatingsInput,
    #[arg(long)]
    pub metadata: Option<PathBuf>,
    /// TOML grid and settings; defaults to the built-in grid.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<f64>,
    #[arg(long, value_enum)]
    pub scope: Option<ScopeArg>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[command(flatten)]
    pub features: FeatureArgs,
    /// Write one JSON record per cell.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RankingArg {
    Signed,
    Magnitude,
}

#[derive(Args)]
pub struct SynthArgs {
    /// TOML experiment manifest.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write summary, per-repetition and per-user records as JSON lines.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace ALS with a model that encodes the profiles directly.
    #[arg(long)]
    pub direct_encode: bool,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long, value_enum)]
    pub ranking: Option<RankingArg>,
    #[arg(long, value_enum)]
    pub aggregation: Option<AggregationArg>,
    /// Stars added per liked feature and removed per disliked one.
    #[arg(long)]
    pub delta: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .parse_default_env()
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();

    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(1);
        }
    }

    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

/// The error chain, skipping causes already spelled out by their parent.
fn message(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

/// 2 configuration, 3 I/O, 4 input data, 1 anything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    use lfi::Error as E;
    if e.downcast_ref::<lookup::LookupError>().is_some() {
        return 4;
    }
    if e.downcast_ref::<std::io::Error>().is_some() {
        return 3;
    }
    let mut err = e.downcast_ref::<E>();
    while let Some(E::Repetition { source, .. }) = err {
        err = Some(source);
    }
    match err {
        Some(E::Config(_)) => 2,
        Some(E::Io { .. }) => 3,
        Some(E::Parse { .. } | E::Validation(_) | E::Format(_) | E::Json(_) | E::Index { .. } | E::Dimension { .. }) => 4,
        _ if e.downcast_ref::<config::ConfigError>().is_some() => 2,
        _ => 1,
    }
}
