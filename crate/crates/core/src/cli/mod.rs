//! `slcmm` command-line front-end.
//!
//! Every flag can also be given in a `--config` file as `flag-name=value`;
//! flags on the command line win over the file. Output layout under `--out`:
//!
//! ```text
//! models/   model.slc, template.obj (+ .lmk)
//! fits/     <target>.obj, <target>.fit.json, <target>.log
//! transfer/ <target>.obj (+ .lmk)
//! reports/  learn_log.csv, fit_summary.csv, landmark_error.csv, metric CSVs
//! ```
//!
//! Exit codes: 0 success, 1 internal error, 2 configuration error, 3 data error.

mod commands;
mod config;

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub use config::{config_args, parse_config};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Internal(_) => 1,
        }
    }
}

/// Comma-separated list value, e.g. `1,2,5`.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: std::fmt::Display,
{
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(',')
            .map(|p| p.trim().parse::<T>().map_err(|e| format!("'{p}': {e}")))
            .collect::<Result<Vec<T>, String>>()
            .map(List)
    }
}

#[derive(Debug, Parser)]
#[command(name = "slcmm", version, about = "Sparse locally coherent 3D morphable face models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic face dataset.
    Synth(SynthArgs),
    /// Learn an SLC model from registered meshes.
    Learn(LearnArgs),
    /// Fit a model to raw target scans.
    Fit(FitArgs),
    /// Transfer template topology and landmarks onto raw targets.
    Transfer(TransferArgs),
    /// Compactness, generalization and specificity reports.
    Eval(EvalArgs),
    /// Hyperparameter sweep over k, lambda1 and lambda2.
    Sweep(SweepArgs),
}

/// Parameter presets for learning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// k = 50, lambda1 = 1, lambda2 = 1.
    MainText,
    /// k = 50, lambda1 = 10, lambda2 = 1.
    Supplemental,
}

impl Preset {
    /// `(k, lambda1, lambda2)`.
    pub fn values(self) -> (usize, f64, f64) {
        match self {
            Preset::MainText => (50, 1.0, 1.0),
            Preset::Supplemental => (50, 10.0, 1.0),
        }
    }
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct SynthArgs {
    /// Config file of flag=value lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Training identities.
    #[arg(long, default_value_t = 10)]
    pub identities: usize,
    /// Held-out identities (default: one per four training identities).
    #[arg(long)]
    pub test_identities: Option<usize>,
    /// Expressions per identity, the first one neutral.
    #[arg(long, default_value_t = 4)]
    pub expressions: usize,
    /// Grid columns.
    #[arg(long, default_value_t = 41)]
    pub cols: usize,
    /// Grid rows.
    #[arg(long, default_value_t = 49)]
    pub rows: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Noise sigma (mm) of the degraded copies of the test faces in `targets/`.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Fraction of vertices kept in `targets/`.
    #[arg(long, default_value_t = 1.0)]
    pub keep: f64,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct LearnArgs {
    /// Config file of flag=value lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory of registered training meshes (OBJ or PLY).
    #[arg(long)]
    pub train_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults for k, lambda1 and lambda2.
    #[arg(long, value_enum, default_value_t = Preset::MainText)]
    pub preset: Preset,
    /// Number of components.
    #[arg(long)]
    pub k: Option<usize>,
    /// Sparsity weight.
    #[arg(long)]
    pub lambda1: Option<f64>,
    /// Ridge weight.
    #[arg(long)]
    pub lambda2: Option<f64>,
    /// Maximum alternating rounds.
    #[arg(long, default_value_t = 30)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Fitting parameters shared by `fit` and `sweep`.
#[derive(Debug, Args, Clone)]
pub struct FitParamArgs {
    /// Minimum error improvement per iteration (mm).
    #[arg(long, default_value_t = 0.01)]
    pub tau_e: f64,
    /// Iteration limit.
    #[arg(long, default_value_t = 30)]
    pub max_iter: usize,
    /// Deformation regularization.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Crop radius around the nose tip (mm); `inf` disables cropping.
    #[arg(long, default_value_t = 95.0)]
    pub crop_radius: f64,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct FitArgs {
    /// Config file of flag=value lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model container written by `learn`.
    #[arg(long)]
    pub model: PathBuf,
    /// Template mesh (default: template.obj next to the model).
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Directory of raw target scans.
    #[arg(long)]
    pub target_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub fit: FitParamArgs,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct TransferArgs {
    /// Config file of flag=value lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fitted meshes written by `fit` (default: <out>/fits).
    #[arg(long)]
    pub fits_dir: Option<PathBuf>,
    /// Raw targets, matched to fits by file stem.
    #[arg(long)]
    pub target_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct EvalArgs {
    /// Config file of flag=value lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train_dir: PathBuf,
    /// Held-out registered meshes.
    #[arg(long)]
    pub test_dir: PathBuf,
    /// Optional SLC model for its generalization curve.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Component counts, comma-separated (default: 1 to the PCA rank).
    #[arg(long)]
    pub ks: Option<List<usize>>,
    /// Regularization of the SLC generalization fit.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Random instances for specificity.
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct SweepArgs {
    /// Config file of flag=value lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train_dir: PathBuf,
    /// Targets fitted in every grid cell.
    #[arg(long)]
    pub target_dir: PathBuf,
    /// Component counts, comma-separated.
    #[arg(long, default_value = "50")]
    pub ks: List<usize>,
    /// Sparsity weights, comma-separated.
    #[arg(long, default_value = "1")]
    pub lambda1s: List<f64>,
    /// Ridge weights, comma-separated.
    #[arg(long, default_value = "1")]
    pub lambda2s: List<f64>,
    #[arg(long, default_value_t = 30)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub fit: FitParamArgs,
    #[arg(long)]
    pub out: PathBuf,
}

fn long_flags(subcommand: &str) -> BTreeSet<String> {
    let cmd = Cli::command();
    cmd.find_subcommand(subcommand)
        .map(|s| s.get_arguments().filter_map(|a| a.get_long().map(str::to_string)).collect())
        .unwrap_or_default()
}

/// Value of `--config` among the subcommand arguments, if any.
fn find_config(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let a = a.to_str()?;
        if a == "--" {
            return None;
        }
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

/// Parses `args` (including the program name), merging the config file.
/// Config entries are inserted right after the subcommand name, so later
/// command-line flags override them.
pub fn parse_args<I, T>(args: I) -> Result<Cli, ParseOutcome>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let sub = args
        .iter()
        .enumerate()
        .skip(1)
        .find(|(_, a)| !a.to_string_lossy().starts_with('-'))
        .and_then(|(i, a)| {
            let name = a.to_str()?;
            Cli::command().find_subcommand(name).map(|_| (i, name.to_string()))
        });
    let Some((pos, name)) = sub else {
        return Cli::try_parse_from(&args).map_err(ParseOutcome::Clap);
    };
    let Some(path) = find_config(&args[pos + 1..]) else {
        return Cli::try_parse_from(&args).map_err(ParseOutcome::Clap);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| ParseOutcome::Error(CliError::Config(format!("cannot read config {}: {e}", path.display()))))?;
    let entries = parse_config(&text).map_err(ParseOutcome::Error)?;
    let extra = config_args(&entries, &long_flags(&name)).map_err(ParseOutcome::Error)?;
    let mut merged: Vec<OsString> = args[..=pos].to_vec();
    merged.extend(extra.into_iter().map(OsString::from));
    merged.extend(args[pos + 1..].iter().cloned());
    let matches = Cli::command().try_get_matches_from(merged).map_err(ParseOutcome::Clap)?;
    Cli::from_arg_matches(&matches).map_err(ParseOutcome::Clap)
}

/// Why [`parse_args`] did not produce a [`Cli`].
#[derive(Debug)]
pub enum ParseOutcome {
    /// Includes `--help` and `--version`.
    Clap(clap::Error),
    Error(CliError),
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Learn(a) => commands::learn(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Transfer(a) => commands::transfer(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Sweep(a) => commands::sweep(&a),
    }
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match parse_args(args) {
        Ok(cli) => cli,
        Err(ParseOutcome::Clap(e)) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
        Err(ParseOutcome::Error(e)) => {
            eprintln!("slcmm: {e}");
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("slcmm: {e}");
            e.exit_code()
        }
    }
}
