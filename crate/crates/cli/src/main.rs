//! `ldr`: simulate, fit, predict, evaluate and embed from the command line.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "ldr",
    version,
    about = "Lomax delegate racing survival models for competing risks"
)]
pub struct Cli {
    /// Directory that receives every artifact of the command.
    #[arg(long, global = true, default_value = ".")]
    pub output_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic competing-risks data set.
    Simulate(SimulateArgs),
    /// Fit a model by Gibbs sampling or MAP.
    Fit(FitArgs),
    /// Cumulative incidence per subject, risk and horizon.
    Predict(PredictArgs),
    /// C-index or Brier score on fully observed rows.
    Evaluate(EvaluateArgs),
    /// Sub-risk representatives and a 2-D Isomap of the covariates.
    Embed(EmbedArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SeedArg {
    /// RNG seed; falls back to the config file, then to a generated seed.
    #[arg(long, env = "LDR_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Input CSV with `time`, `event` and covariate columns.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "time")]
    pub time_column: String,
    #[arg(long, default_value = "event")]
    pub event_column: String,
    /// Covariate columns in order; every other column when omitted.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// Number of risks; inferred from the largest event code when omitted.
    #[arg(long)]
    pub risks: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GeneratorArg {
    Data1,
    Data2,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub generator: GeneratorArg,
    #[arg(long)]
    pub n: usize,
    /// Censoring time; the generator default when omitted.
    #[arg(long)]
    pub censor_time: Option<f64>,
    /// Output file stem: writes `<name>.csv` and `<name>.json`.
    #[arg(long, default_value = "data")]
    pub name: String,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Gibbs,
    Map,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RPriorArg {
    Vague,
    Unit,
    L2,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "gibbs")]
    pub method: Method,
    /// TOML file with `seed`, `[gibbs]` and `[map]` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Truncation level: sub-risks per risk.
    #[arg(long = "K")]
    pub k: Option<usize>,
    /// Short Gibbs profile (2000 sweeps, 1500 burn-in).
    #[arg(long)]
    pub fast: bool,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    /// Independent Gibbs chains, run concurrently and stored separately.
    #[arg(long, default_value_t = 1)]
    pub chains: usize,
    /// Standard deviation of the initial coefficients.
    #[arg(long)]
    pub init_sd: Option<f64>,
    /// MAP: maximum number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// MAP: optimizer step size.
    #[arg(long)]
    pub step_size: Option<f64>,
    /// MAP: gradient draws per subject.
    #[arg(long)]
    pub mc_samples: Option<usize>,
    /// MAP: minibatch size, 0 for full batch.
    #[arg(long)]
    pub minibatch: Option<usize>,
    /// MAP: prior on the gamma shapes.
    #[arg(long, value_enum)]
    pub r_prior: Option<RPriorArg>,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Fitted parameters: `params.json`, or a Gibbs `trace.jsonl` to average
    /// over posterior draws.
    #[arg(long)]
    pub params: PathBuf,
    /// Keep every n-th posterior draw of a trace.
    #[arg(long, default_value_t = 1)]
    pub draw_stride: usize,
    /// Monte-Carlo draws per CIF evaluation.
    #[arg(long, default_value_t = ldr_core::eval::DEFAULT_N_MC)]
    pub n_mc: usize,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Horizons, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub tau: Vec<f64>,
    /// One-based risks to report; all when omitted.
    #[arg(long, value_delimiter = ',')]
    pub risk: Option<Vec<usize>>,
    #[arg(long, default_value = "cif.csv")]
    pub out: String,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Cindex,
    Brier,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [MetricArg::Cindex, MetricArg::Brier])]
    pub metric: Vec<MetricArg>,
    /// Strictly increasing horizons, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub tau: Vec<f64>,
    /// Label stored with the report.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value = "metrics.csv")]
    pub out: String,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Clone, Args)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = ldr_core::interpret::DEFAULT_NEIGHBORS)]
    pub neighbors: usize,
    #[arg(long, default_value = "embedding.csv")]
    pub out: String,
    #[command(flatten)]
    pub seed: SeedArg,
}

/// Where the seed came from, for the manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedOrigin {
    Flag,
    Env,
    Config,
    Generated,
}

impl SeedOrigin {
    pub fn name(self) -> &'static str {
        match self {
            SeedOrigin::Flag => "flag",
            SeedOrigin::Env => "env",
            SeedOrigin::Config => "config",
            SeedOrigin::Generated => "generated",
        }
    }
}

fn seed_origin(matches: &clap::ArgMatches) -> Option<SeedOrigin> {
    let (_, sub) = matches.subcommand()?;
    match sub.value_source("seed")? {
        ValueSource::EnvVariable => Some(SeedOrigin::Env),
        ValueSource::CommandLine => Some(SeedOrigin::Flag),
        _ => None,
    }
}

fn main() -> ExitCode {
    let matches = Cli::command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let argv: Vec<String> = std::env::args().skip(1).collect();
    match commands::run(&cli, seed_origin(&matches), argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            e.report();
            ExitCode::from(e.exit_code())
        }
    }
}

impl From<GeneratorArg> for ldr_core::Generator {
    fn from(g: GeneratorArg) -> Self {
        match g {
            GeneratorArg::Data1 => ldr_core::Generator::Data1,
            GeneratorArg::Data2 => ldr_core::Generator::Data2,
        }
    }
}

impl From<CliError> for ExitCode {
    fn from(e: CliError) -> Self {
        ExitCode::from(e.exit_code())
    }
}
