//! Command-line interface: `train`, `gradcam`, `select`, `experiment` and `synth`.
//!
//! Every command reads an optional TOML config, applies command-line overrides,
//! validates everything, and only then trains and writes outputs. Exit codes are 0
//! on success, 1 for configuration errors and 2 for runtime errors.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::data::Role;
use crate::error::Error;
use crate::selection::RemovalDirection;
use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "fgssa",
    version,
    about = "Gradient-based signal selection for time-series CNNs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model (or a hyperparameter grid) and evaluate it on the test split.
    Train(CommonArgs),
    /// Grad-CAM vectors and signal importance for a trained model.
    Gradcam(GradcamArgs),
    /// Greedy signal selection, one trace per seed plus a summary.
    Select(SelectArgs),
    /// Removal study: accuracy curve and removal timing across seeds.
    Experiment(ExperimentArgs),
    /// Generate a synthetic dataset with known informative signals.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed; all randomness derives from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Input CSV, overriding `data.csv`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Largest subset size for selection.
    #[arg(long)]
    pub gamma: Option<usize>,
    /// Number of seeds (independent runs).
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Training epochs per model.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct GradcamArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Model checkpoint written by `train`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Windows to export grad-CAM vectors for (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub windows: Vec<usize>,
    /// Part of the data to analyze: all, train, valid or test.
    #[arg(long, value_parser = parse_role)]
    pub split: Option<Role>,
}

#[derive(Debug, Clone, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Also run the exhaustive subset search.
    #[arg(long)]
    pub brute_force: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Remove the least (`min`) or most (`max`) important signal each iteration.
    #[arg(long, value_parser = parse_direction)]
    pub direction: Option<RemovalDirection>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub informative: Option<usize>,
    #[arg(long)]
    pub noise: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub segment_len: Option<usize>,
}

fn parse_role(s: &str) -> Result<Role, String> {
    match s {
        "all" => Ok(Role::All),
        "train" => Ok(Role::Train),
        "valid" => Ok(Role::Valid),
        "test" => Ok(Role::Test),
        _ => Err(format!("unknown split '{s}' (expected all, train, valid or test)")),
    }
}

fn parse_direction(s: &str) -> Result<RemovalDirection, String> {
    match s {
        "min" => Ok(RemovalDirection::Min),
        "max" => Ok(RemovalDirection::Max),
        _ => Err(format!("unknown direction '{s}' (expected min or max)")),
    }
}

/// Failure of a command, mapped to an exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

impl CommonArgs {
    /// Config file (or defaults) with command-line overrides applied.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).map_err(CliError::Config)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = &self.data {
            cfg.data.csv = Some(d.clone());
            cfg.data.snapshot = None;
        }
        if let Some(g) = self.gamma {
            cfg.select.gamma = Some(g);
        }
        if let Some(n) = self.seeds {
            cfg.select.seeds = n;
            cfg.experiment.seeds = n;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        Ok(cfg)
    }
}

/// Runs the CLI on explicit arguments and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Train(a) => commands::train(&a.resolve()?, &a.out),
        Command::Gradcam(a) => {
            let mut cfg = a.common.resolve()?;
            if a.model.is_some() {
                cfg.gradcam.model = a.model.clone();
            }
            if !a.windows.is_empty() {
                cfg.gradcam.windows = a.windows.clone();
            }
            if a.split.is_some() {
                cfg.gradcam.split = a.split;
            }
            commands::gradcam(&cfg, &a.common.out)
        }
        Command::Select(a) => {
            let mut cfg = a.common.resolve()?;
            cfg.select.brute_force |= a.brute_force;
            commands::select(&cfg, &a.common.out)
        }
        Command::Experiment(a) => {
            let mut cfg = a.common.resolve()?;
            if let Some(d) = a.direction {
                cfg.experiment.direction = d;
            }
            commands::experiment(&cfg, &a.common.out)
        }
        Command::Synth(a) => {
            let mut cfg = a.common.resolve()?;
            let s = &mut cfg.synth;
            s.informative = a.informative.unwrap_or(s.informative);
            s.noise = a.noise.unwrap_or(s.noise);
            s.samples_per_class = a.per_class.unwrap_or(s.samples_per_class);
            s.segment_len = a.segment_len.unwrap_or(s.segment_len);
            commands::synth(&cfg, &a.common.out)
        }
    }
}

pub fn main() -> i32 {
    run(std::env::args_os())
}
