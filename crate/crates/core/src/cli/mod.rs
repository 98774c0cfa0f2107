//! Command-line experiment runner.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 numerical
//! divergence, 4 output I/O failure.

mod commands;
pub mod config;
pub mod manifest;
pub mod profile;
pub mod svg;

use std::ffi::OsString;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::aht::AhtError;
use crate::diversity::DiversityError;
use crate::envs::{EnvError, EnvId};
use crate::marl::MarlError;
use crate::mcs::McsError;
use crate::nn::NnError;

pub use config::{resolve, ExperimentConfig, Method, TeammateSource};
pub use manifest::Manifest;
pub use profile::{BehaviorProfile, ProfileRow};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "MCSFORGE_OUT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical divergence: {0}")]
    Divergence(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub(crate) fn io(path: &Path, e: impl Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub(crate) fn csv(e: impl Display) -> Self {
        CliError::Config(format!("csv: {e}"))
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::NonFinite(s) => CliError::Divergence(s),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<MarlError> for CliError {
    fn from(e: MarlError) -> Self {
        match e {
            MarlError::Divergence { .. } | MarlError::NonFinite(_) => CliError::Divergence(e.to_string()),
            MarlError::Io(s) => CliError::Io(s),
            MarlError::Nn(e) => e.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<AhtError> for CliError {
    fn from(e: AhtError) -> Self {
        match e {
            AhtError::Divergence { .. } | AhtError::NonFinite(_) => CliError::Divergence(e.to_string()),
            AhtError::Nn(e) => e.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<McsError> for CliError {
    fn from(e: McsError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DiversityError> for CliError {
    fn from(e: DiversityError) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "mcsforge", version, about = "Teammate generation and ad hoc teamwork experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train teammate populations, one run directory per seed.
    Generate(GenerateArgs),
    /// Cross-play return matrix of a population checkpoint.
    XpMatrix(XpMatrixArgs),
    /// Exact minimum coverage sets over the scripted policy universe.
    Mcs(McsArgs),
    /// Train adaptive agents against a teammate set, one run directory per seed.
    TrainAht(TrainAhtArgs),
    /// Robustness against the scripted evaluation heuristics.
    Eval(EvalArgs),
    /// Behavior profile of a population or agent checkpoint, with plots.
    Analyze(AnalyzeArgs),
    /// Render CSV outputs as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Experiment configuration (JSON).
    #[arg(long, conflicts_with = "from_manifest")]
    pub config: Option<PathBuf>,
    /// Fill population size, tolerance and baseline weight with the published defaults.
    #[arg(long, value_name = "ENV", value_parser = config::parse_env, conflicts_with = "from_manifest")]
    pub use_paper_defaults: Option<EnvId>,
    /// Override a configuration value, e.g. `--set generation.schedule.total_steps=2000`.
    #[arg(long = "set", value_name = "KEY=VALUE", conflicts_with = "from_manifest")]
    pub set: Vec<String>,
    /// Run seeds 0..N instead of the configured list.
    #[arg(long, value_name = "N", conflicts_with = "from_manifest")]
    pub seeds: Option<u64>,
    /// Worker-pool size (0 = all cores). Results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output root; defaults to `runtime.output_dir`, then $MCSFORGE_OUT, then `runs`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Rerun the single seed recorded in a manifest (file or run directory).
    #[arg(long)]
    pub from_manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct XpMatrixArgs {
    /// Population checkpoint.
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Play the most likely action instead of sampling.
    #[arg(long)]
    pub greedy: bool,
    /// Exact expected returns (matrix game only).
    #[arg(long)]
    pub exact: bool,
    /// Output directory; defaults to the checkpoint's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct McsArgs {
    #[arg(long, value_parser = config::parse_env)]
    pub env: EnvId,
    #[arg(long)]
    pub grid_dim: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Foraging: add the nearest/farthest-item policies to the universe.
    #[arg(long)]
    pub lbf_distance: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainAhtArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Population checkpoints whose teammate policies form the training set.
    #[arg(long = "population", value_name = "FILE")]
    pub populations: Vec<PathBuf>,
    /// Scripted training teammates by id, e.g. `1,2,3`.
    #[arg(long, value_delimiter = ',', conflicts_with = "populations")]
    pub heuristics: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// `train-aht` run directories (one per seed); every checkpoint becomes a curve point.
    #[arg(long = "run-dir", value_name = "DIR")]
    pub run_dirs: Vec<PathBuf>,
    /// Agent checkpoints (one per seed).
    #[arg(long = "agent", value_name = "FILE")]
    pub agents: Vec<PathBuf>,
    /// Also evaluate the privileged best responder.
    #[arg(long)]
    pub oracle: bool,
    /// Environment, required when only the oracle is evaluated.
    #[arg(long, value_parser = config::parse_env)]
    pub env: Option<EnvId>,
    #[arg(long)]
    pub grid_dim: Option<usize>,
    /// Experiment configuration whose `eval` block supplies defaults for the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Meta-episodes per heuristic [default: 50].
    #[arg(long)]
    pub meta_episodes: Option<usize>,
    /// Episodes per meta-episode for the oracle.
    #[arg(long, default_value_t = crate::aht::DEFAULT_META_EPISODES)]
    pub oracle_meta_length: usize,
    #[arg(long, value_delimiter = ',')]
    pub heuristics: Vec<usize>,
    #[arg(long)]
    pub greedy: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Population or agent checkpoint.
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub episodes: usize,
    /// Episodes per cross-play cell when the matrix is estimated.
    #[arg(long, default_value_t = 100)]
    pub xp_episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub greedy: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Population training metrics.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Any matrix CSV (cross-play or behavior profile).
    #[arg(long)]
    pub matrix: Vec<PathBuf>,
    /// Robustness curve.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// Adaptive-agent training log.
    #[arg(long)]
    pub aht_log: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(a) => commands::generate(&a).map(|_| ()),
        Command::XpMatrix(a) => commands::xp_matrix(&a),
        Command::Mcs(a) => commands::mcs(&a),
        Command::TrainAht(a) => commands::train_aht(&a).map(|_| ()),
        Command::Eval(a) => commands::eval(&a),
        Command::Analyze(a) => commands::analyze(&a),
        Command::Plot(a) => commands::plot(&a),
    }
}

pub use commands::{generate, train_aht};
