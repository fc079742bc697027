use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "sleepopt",
    version,
    about = "Sleep-quality prediction, attribution and behavior planning"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Serialize)]
pub struct Global {
    /// Seed for every random choice (splits, subsampling, synthetic data).
    #[arg(long, global = true, env = "SLEEPOPT_SEED", default_value_t = 42)]
    pub seed: u64,
    /// Survey schema JSON; the bundled schema is used when omitted.
    #[arg(long, global = true)]
    pub schema: Option<PathBuf>,
    /// Output directory; a manifest.json is written here on every run.
    #[arg(long, global = true, env = "SLEEPOPT_OUT", default_value = "out")]
    pub out: PathBuf,
    /// Encoding of report tables.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Encode, cap, engineer and label a raw survey export.
    Preprocess {
        #[arg(long = "in", value_name = "SURVEY_CSV")]
        input: PathBuf,
    },
    /// Generate a labeled synthetic dataset with planted coefficients.
    Synth(SynthArgs),
    /// Grid-search (or fit one configuration of) the boosted-tree classifier.
    Train(TrainArgs),
    /// Attribute every prediction on a dataset and derive population weights.
    Explain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// One behavior plan per record at a single penalty.
    Recommend {
        #[command(flatten)]
        cohort: CohortArgs,
        #[arg(long, default_value_t = 0.2)]
        lambda: f64,
        /// Send each record to a running service instead of solving locally.
        #[arg(long, value_name = "URL")]
        server: Option<String>,
    },
    /// Cohort averages over several penalties.
    Sweep {
        #[command(flatten)]
        cohort: CohortArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3")]
        lambdas: Vec<f64>,
    },
    /// Average best benefit with at most k changes, k = 0..=kmax.
    Pareto {
        #[command(flatten)]
        cohort: CohortArgs,
        #[arg(long, default_value_t = 7)]
        kmax: usize,
    },
    /// Full objective against its no-penalty and equal-weight variants.
    Ablate {
        #[command(flatten)]
        cohort: CohortArgs,
        #[arg(long, default_value_t = 0.2)]
        lambda: f64,
    },
    /// Run the HTTP service.
    Serve(ServeArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Preprocess { .. } => "preprocess",
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Explain { .. } => "explain",
            Command::Recommend { .. } => "recommend",
            Command::Sweep { .. } => "sweep",
            Command::Pareto { .. } => "pareto",
            Command::Ablate { .. } => "ablate",
            Command::Serve(_) => "serve",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: usize,
    /// `name=coef` pairs, comma separated; unnamed fields get 0.
    #[arg(long, value_delimiter = ',', value_parser = parse_planted)]
    pub planted: Vec<(String, f64)>,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub intercept: f64,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
}

fn parse_planted(s: &str) -> Result<(String, f64), String> {
    let (name, coef) = s
        .split_once('=')
        .ok_or_else(|| format!("expected name=coef, got `{s}`"))?;
    let coef = coef
        .trim()
        .parse::<f64>()
        .map_err(|_| format!("bad coefficient in `{s}`"))?;
    Ok((name.trim().to_string(), coef))
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Search the standard grid.
    #[arg(long, conflicts_with = "config")]
    pub grid: bool,
    /// Fit the single configuration in this JSON file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Train/validation/test shares.
    #[arg(long, value_delimiter = ',', num_args = 3, default_value = "0.6,0.2,0.2")]
    pub split: Vec<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct CohortArgs {
    /// Population weights (weights.json from `explain`).
    #[arg(
        long = "model-weights",
        value_name = "WEIGHTS_JSON",
        required_unless_present = "per_student_weights"
    )]
    pub model_weights: Option<PathBuf>,
    /// Dataset CSV of student profiles.
    #[arg(long)]
    pub data: PathBuf,
    /// Use each student's own attributions instead of population weights.
    #[arg(long, requires = "model")]
    pub per_student_weights: bool,
    /// Model artifact, needed for per-student weights.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long)]
    pub model: PathBuf,
    /// Population weights; the bundled reference weights when omitted.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Directory of static UI assets served on unmatched paths.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}
