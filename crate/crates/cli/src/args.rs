use std::path::PathBuf;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "volnet", version, about = "Arbitrage-free neural implied-volatility surfaces")]
pub struct Cli {
    /// Seed for every random stream (splits, grids, initialisation, simulation).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Directory for all outputs, including the run manifest.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,

    /// JSON file overriding the default hyperparameters.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic quotes from an SSVI surface.
    Simulate(SimulateArgs),
    /// Clean quotes and fit one surface per trading day.
    Fit(FitArgs),
    /// Evaluate a fitted surface on a grid or on given points.
    Predict(PredictArgs),
    /// Train/test MAPE report, overall and per quarter.
    Evaluate(EvaluateArgs),
    /// Audit the no-arbitrage conditions on random grids.
    CheckArbitrage(CheckArgs),
    /// Risk-neutral density of log-moneyness at given maturities.
    Density(DensityArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Fit(_) => "fit",
            Command::Predict(_) => "predict",
            Command::Evaluate(_) => "evaluate",
            Command::CheckArbitrage(_) => "check-arbitrage",
            Command::Density(_) => "density",
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Quotes per day.
    #[arg(long, default_value_t = 600)]
    pub quotes: usize,
    /// Standard deviation of the multiplicative log-normal vol noise.
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    /// Number of consecutive business days, each with its own seed offset.
    #[arg(long, default_value_t = 1)]
    pub days: usize,
    #[arg(long, default_value = "2016-01-04")]
    pub trade_date: NaiveDate,
    #[arg(long, default_value_t = 2000.0)]
    pub spot: f64,
    #[arg(long, default_value_t = 0.02)]
    pub rate: f64,
    /// Maturities in calendar days.
    #[arg(long, value_delimiter = ',', default_value = "14,30,61,91,182,365,547,730")]
    pub maturities: Vec<u32>,
    /// Quote file name, relative to the output directory.
    #[arg(long, default_value = "day.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArchArg {
    Single,
    Multi,
    Vanilla,
    Ssvi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RefreshArg {
    Once,
    PerIteration,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Quote file.
    pub quotes: PathBuf,
    #[arg(long, value_enum, default_value_t = ArchArg::Multi)]
    pub arch: ArchArg,
    /// Number of single models in the multi-model.
    #[arg(long = "I")]
    pub experts: Option<usize>,
    /// Hidden units per single model (default 8 for multi, 32 otherwise).
    #[arg(long = "J")]
    pub hidden: Option<usize>,
    /// Hidden units of the weighting network.
    #[arg(long = "K")]
    pub gate_hidden: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub omega: Option<f64>,
    /// Initial Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Inverse-time decay constant: lr0 / (1 + t / decay_steps).
    #[arg(long, default_value_t = volnet::training::DEFAULT_DECAY_STEPS)]
    pub decay_steps: f64,
    /// Keep the learning rate fixed instead of decaying it.
    #[arg(long, conflicts_with = "decay_steps")]
    pub constant_lr: bool,
    /// Drop the four no-arbitrage penalties (gamma = delta = eta = rho = 0).
    #[arg(long)]
    pub incomplete_constraints: bool,
    #[arg(long, default_value_t = 100)]
    pub log_every: usize,
    #[arg(long, value_enum, default_value_t = RefreshArg::Once)]
    pub grid_refresh: RefreshArg,
    /// Record elapsed milliseconds in the trace (makes traces non-reproducible).
    #[arg(long)]
    pub wall_clock: bool,
    /// Fit only these trading days.
    #[arg(long, value_delimiter = ',')]
    pub date: Vec<NaiveDate>,
    /// Number of days fitted concurrently.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    pub days_parallel: u16,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model file written by `fit` (network or SSVI).
    #[arg(long)]
    pub model: PathBuf,
    /// CSV with `m` and `tau` columns; replaces the rectangular grid.
    #[arg(long)]
    pub points: Option<PathBuf>,
    #[arg(long, default_value_t = -1.5, allow_negative_numbers = true)]
    pub m_min: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub m_max: f64,
    #[arg(long, default_value_t = 0.02)]
    pub tau_min: f64,
    #[arg(long, default_value_t = 2.0)]
    pub tau_max: f64,
    #[arg(long, default_value_t = 51)]
    pub n_m: usize,
    #[arg(long, default_value_t = 40)]
    pub n_tau: usize,
    /// Output file name, relative to the output directory.
    #[arg(long, default_value = "surface.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Quote file the models were fitted on.
    pub quotes: PathBuf,
    /// One or more model files; each is evaluated on its own trading day.
    #[arg(long, required = true, num_args = 1..)]
    pub model: Vec<PathBuf>,
    /// Points per audit grid (core and wings); 0 skips the audit.
    #[arg(long, default_value_t = 10_000)]
    pub grid_points: usize,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Points per audit grid (core and wings).
    #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub grid_points: u64,
    /// Maturities (calendar days) for the large-moneyness d+ check.
    #[arg(long, value_delimiter = ',', default_value = "11,32,109,704")]
    pub limit_days: Vec<f64>,
    #[arg(long, default_value_t = 6.0)]
    pub limit_m_max: f64,
}

#[derive(Debug, Args)]
pub struct DensityArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Maturities in calendar days.
    #[arg(long, value_delimiter = ',', default_value = "11,32,109,704")]
    pub tau_days: Vec<f64>,
    /// Grid size; at least 201.
    #[arg(long, default_value_t = 801)]
    pub points: usize,
    #[arg(long, default_value_t = volnet::evaluation::DENSITY_SPAN.0, allow_negative_numbers = true)]
    pub m_min: f64,
    #[arg(long, default_value_t = volnet::evaluation::DENSITY_SPAN.1, allow_negative_numbers = true)]
    pub m_max: f64,
}
