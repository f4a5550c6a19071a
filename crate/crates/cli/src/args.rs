//! Command-line grammar.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "ivcheck", version, about = "Specification tests for instrumental-variable models")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML configuration file; command-line flags override its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random draw. Without it a fresh seed is drawn and logged.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Maximum number of worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Directory for result tables and the run manifest.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the first step and print coefficients, robust standard errors and first-stage F.
    Fit(FitArgs),
    /// Test exogeneity (and optionally homoskedasticity) of a parametric model.
    Test(TestArgs),
    /// Sargan or Hansen J overidentification test.
    Overid(OveridArgs),
    /// Parameter points of a parametric model that the test does not reject.
    IdentifiedSet(IdentifiedSetArgs),
    /// Control-function estimates: conditional means, marginal treatment effects and the ASF.
    Mte(MteArgs),
    /// Monte Carlo rejection rates for a named study or a study file.
    Simulate(SimulateArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Comma-delimited file with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Outcome column.
    #[arg(long)]
    pub y: String,
    /// Regressor columns.
    #[arg(long, value_delimiter = ',', required = true)]
    pub x: Vec<String>,
    /// Instrument columns; without them the regressors condition themselves.
    #[arg(long, value_delimiter = ',')]
    pub z: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Form {
    Linear,
    Boxcox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum On {
    Z,
    X,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitMethodArg {
    Ols,
    Iv,
    Gmm,
    Boxcox,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Estimator; defaults to iv when instruments are given and ols otherwise.
    #[arg(long, value_enum)]
    pub method: Option<FitMethodArg>,
    /// Box-Cox grid as `lo:hi:count`.
    #[arg(long, allow_hyphen_values = true)]
    pub lambda_grid: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AssumptionArg {
    Exogeneity,
    Homoskedasticity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SmootherArg {
    Series,
    LocalLinear,
    CellMeans,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BoxCoxRoute {
    /// Test at the estimated λ.
    PlugIn,
    /// Re-estimate at every λ and reject only if all are rejected.
    Profile,
}

#[derive(Debug, Clone, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "exogeneity")]
    pub assume: Vec<AssumptionArg>,
    /// Significance levels; overrides `test.alpha_levels`.
    #[arg(long, value_delimiter = ',')]
    pub alpha: Vec<f64>,
    /// Conditioning variable; defaults to z when instruments are given.
    #[arg(long, value_enum)]
    pub on: Option<On>,
    #[arg(long, value_enum, default_value = "linear")]
    pub form: Form,
    /// Box-Cox grid as `lo:hi:count`.
    #[arg(long, allow_hyphen_values = true)]
    pub lambda_grid: Option<String>,
    #[arg(long, value_enum, default_value = "plug-in")]
    pub boxcox_route: BoxCoxRoute,
    /// Overrides `npreg.method`.
    #[arg(long, value_enum)]
    pub smoother: Option<SmootherArg>,
    /// Overrides `npreg.series_order`.
    #[arg(long)]
    pub order: Option<usize>,
    /// Overrides `npreg.bandwidth`.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Overrides `grid.count`.
    #[arg(long)]
    pub grid_count: Option<usize>,
    /// Overrides `sim.multiplier_draws`.
    #[arg(long)]
    pub draws: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OveridArg {
    Sargan,
    Hansen,
}

#[derive(Debug, Clone, Args)]
pub struct OveridArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "sargan")]
    pub method: OveridArg,
    /// Instrument functions `z, z², …, z^degree` per instrument column.
    #[arg(long, default_value_t = 3)]
    pub h_degree: usize,
}

#[derive(Debug, Clone, Args)]
pub struct IdentifiedSetArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "linear")]
    pub model: Form,
    /// One `lo:hi:count` range per parameter, in model order; the grid is their product.
    #[arg(long = "theta", required = true, allow_hyphen_values = true)]
    pub theta: Vec<String>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, value_enum)]
    pub on: Option<On>,
    /// Overrides `sim.multiplier_draws`.
    #[arg(long)]
    pub draws: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PropensityArg {
    LocalLinear,
    CellMeans,
}

#[derive(Debug, Clone, Args)]
pub struct MteArgs {
    /// Comma-delimited file with a header row.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub y: String,
    /// The scalar treatment.
    #[arg(long)]
    pub x: String,
    /// The scalar instrument.
    #[arg(long)]
    pub z: String,
    /// Treatment values at which surfaces, MTEs and the ASF are reported.
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    pub x_values: Vec<f64>,
    /// Control values; defaults to 0.01, 0.02, …, 0.99.
    #[arg(long, value_delimiter = ',')]
    pub p_grid: Vec<f64>,
    /// Covariates partialled out of the outcome, treatment and instrument.
    #[arg(long, value_delimiter = ',')]
    pub controls: Vec<String>,
    /// Outcome bounds `lo,hi` for the ASF when the control lacks full support.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub y_bounds: Vec<f64>,
    #[arg(long, value_enum, default_value = "local-linear")]
    pub propensity: PropensityArg,
    /// Multiplier on the outcome-surface bandwidths.
    #[arg(long, default_value_t = 1.0)]
    pub bandwidth_scale: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Preset name (table1 … table8, figure1, figure2) or a study file.
    #[arg(long)]
    pub study: String,
    /// Replications per cell; overrides the study file and `sim.replications`.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Use 500 replications per cell.
    #[arg(long, conflicts_with = "reps")]
    pub full: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    #[arg(long)]
    pub manifest: PathBuf,
}
