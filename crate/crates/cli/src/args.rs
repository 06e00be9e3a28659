use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "clusterjack", version, about = "Cluster-robust inference for logit models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate a logit model and report cluster-robust inference for one coefficient.
    Fit(FitArgs),
    /// Run Monte Carlo rejection and coverage experiments.
    Simulate(SimulateArgs),
    /// Add random placebo regressors to a dataset and tally rejections.
    Placebo(PlaceboArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Weights {
    /// Rademacher with 13 or more clusters, Webb otherwise.
    Auto,
    Rademacher,
    Webb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Dist {
    T,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Delimited,
}

/// Columns shared by `fit` and `placebo`.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Comma-separated input file with a header row.
    #[arg(long)]
    pub input: String,
    /// Binary outcome column.
    #[arg(long)]
    pub outcome: String,
    /// Regressor columns; for `fit`, the first is the coefficient of interest.
    #[arg(long, value_delimiter = ',', required = true)]
    pub regressors: Vec<String>,
    /// Cluster identifier column.
    #[arg(long)]
    pub cluster: String,
    /// Categorical columns entered as fixed effects (generalized-inverse solves).
    #[arg(long, value_delimiter = ',')]
    pub fevar: Vec<String>,
    /// Keep only rows satisfying this expression, e.g. "female==1 & age>=30".
    #[arg(long)]
    pub sample: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Restricted wild cluster bootstrap (WCLR) P values.
    #[arg(long)]
    pub bootstrap: bool,
    /// Unrestricted bootstrap (WCLU): P values, standard errors and intervals.
    #[arg(long)]
    pub nonull: bool,
    /// Bootstrap replications (default 999); on its own it requests the restricted bootstrap.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Also compute the exact delete-one-cluster jackknife (CV3).
    #[arg(long)]
    pub jackknife: bool,
    #[arg(long, value_enum, default_value_t = Weights::Auto)]
    pub weights: Weights,
    /// Reference distribution for the CV1, CV3 and CV3L rows.
    #[arg(long, value_enum, default_value_t = Dist::T)]
    pub dist: Dist,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Confidence level for intervals.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Experiment file of `key = value` lines.
    #[arg(long)]
    pub config: Option<String>,
    /// Named experiment: canonical, fig1, fig2, figI, fig4, fig5, fig6, fig7, fig8, fig9.
    #[arg(long)]
    pub preset: Option<String>,
    /// Monte Carlo replications per configuration (overrides the config).
    #[arg(long)]
    pub reps: Option<usize>,
    /// Bootstrap replications (overrides the config).
    #[arg(long)]
    pub boot_reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated method names (overrides the config).
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<String>,
    #[arg(long, value_enum, default_value_t = Format::Delimited)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlaceboKindArg {
    Binary,
    Ar1,
}

#[derive(Debug, Clone, Args)]
pub struct PlaceboArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t = PlaceboKindArg::Binary)]
    pub kind: PlaceboKindArg,
    /// Number of treated clusters for the binary placebo.
    #[arg(long)]
    pub treated: Option<usize>,
    /// Autoregressive coefficient for the AR(1) placebo.
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    /// Column ordering the AR(1) series within each cluster.
    #[arg(long)]
    pub period: Option<String>,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    #[arg(long, default_value_t = 399)]
    pub boot_reps: usize,
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<String>,
    #[arg(long, value_enum, default_value_t = Weights::Auto)]
    pub weights: Weights,
    /// Test size.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Delimited)]
    pub format: Format,
}
