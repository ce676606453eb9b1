//! Run configuration: parsed command-line arguments, serialized into a
//! manifest next to every output so a run can be repeated exactly.

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum At {
    Null,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceArg {
    Observed,
    MonteCarlo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Analytic,
    Fd,
    /// Analytic where the family supports it, finite differences otherwise.
    Auto,
}

#[derive(Parser, Debug)]
#[command(name = "hac-lrt", version, about = "Likelihood-ratio tests for hierarchical Archimedean copula structures")]
pub struct Cli {
    /// Master random seed.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads (0 uses all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    pub out: Option<String>,
    /// Output format; each command has its own default.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "command")]
pub enum Command {
    /// Draw a sample from a HAC.
    Sample(SampleArgs),
    /// Maximum-likelihood fit, optionally under a hypothesis.
    Fit(FitArgs),
    /// Likelihood-ratio test of a structural hypothesis.
    Test(TestArgs),
    /// Fisher information and its inverse.
    Sigma(SigmaArgs),
    /// Asymptotic local power curve.
    Power(PowerArgs),
    /// Determinant of Sigma over a parameter grid near the cone origin.
    Detscan(DetscanArgs),
    /// Simulation scenario with rejection-rate tables.
    Scenario(ScenarioArgs),
    /// Repeat a run from its manifest.
    Rerun(RerunArgs),
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ModelArgs {
    /// Tree as nested JSON arrays of leaf labels, or @file.
    #[arg(long)]
    pub tree: String,
    /// Generator family: clayton, gumbel, frank or joe.
    #[arg(long)]
    pub family: String,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SampleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    /// Comma-separated parameters in node preorder.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub theta: Vec<f64>,
    #[arg(long)]
    pub n: usize,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct FitArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    /// Data CSV with a header row.
    #[arg(long)]
    pub data: String,
    /// Hypothesis such as "(0,1)=(0)"; unconstrained when absent.
    #[arg(long)]
    pub hypothesis: Option<String>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SigmaSettings {
    /// Point at which the information is evaluated.
    #[arg(long, value_enum, default_value = "null")]
    pub sigma_at: At,
    #[arg(long, value_enum, default_value = "observed")]
    pub sigma_source: SourceArg,
    /// Monte Carlo sample size for the information.
    #[arg(long, default_value_t = 100_000)]
    pub sigma_n: usize,
    #[arg(long, value_enum, default_value = "auto")]
    pub sigma_method: MethodArg,
    /// Kendall-scale finite-difference step.
    #[arg(long, default_value_t = 0.005)]
    pub delta_tau: f64,
    /// Add a small ridge before inverting.
    #[arg(long)]
    pub ridge: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct TestArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub data: String,
    #[arg(long)]
    pub hypothesis: String,
    /// Reference law: mc, mixture, conditional or hybrid.
    #[arg(long, default_value = "mixture")]
    pub method: String,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Replicates of the Monte Carlo null.
    #[arg(long, default_value_t = 5000)]
    pub replicates: usize,
    /// Use alpha / (1 - gamma0) in the conditional test.
    #[arg(long)]
    pub exact: bool,
    /// Nuisance nodes for the hybrid null (preorder ids).
    #[arg(long, value_delimiter = ',')]
    pub nuisance: Option<Vec<usize>>,
    #[command(flatten)]
    #[serde(flatten)]
    pub sigma: SigmaSettings,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SigmaArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_delimiter = ',')]
    pub theta: Vec<f64>,
    /// Observed data; required for the observed source.
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long, value_enum, default_value = "monte-carlo")]
    pub source: SourceArg,
    #[arg(long, default_value_t = 100_000)]
    pub n: usize,
    #[arg(long, value_enum, default_value = "auto")]
    pub method: MethodArg,
    #[arg(long, default_value_t = 0.005)]
    pub delta_tau: f64,
    /// Average over parameter symmetries.
    #[arg(long)]
    pub symmetrize: bool,
    #[arg(long)]
    pub ridge: bool,
    /// Shift tight chains into the interior before estimating.
    #[arg(long)]
    pub interior_shift: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct PowerArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    /// Common Kendall tau of the base point.
    #[arg(long)]
    pub tau: f64,
    #[arg(long, default_value = "(0,1)=(0)")]
    pub hypothesis: String,
    /// Kendall-scale local departures.
    #[arg(long, value_delimiter = ',', default_value = "0,0.05,0.1,0.2,0.3,0.4,0.5")]
    pub h_grid: Vec<f64>,
    /// Direction of the departure per node.
    #[arg(long, value_delimiter = ',')]
    pub e: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 100_000)]
    pub replicates: usize,
    /// Monte Carlo sample size for Sigma.
    #[arg(long, default_value_t = 100_000)]
    pub sigma_n: usize,
    #[arg(long, value_enum, default_value = "auto")]
    pub method: MethodArg,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct DetscanArgs {
    #[arg(long)]
    pub family: String,
    /// Grid values per axis.
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    /// Grid extent above the independence value.
    #[arg(long, default_value_t = 1.0)]
    pub width: f64,
    /// Monte Carlo sample size per grid point.
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, value_enum, default_value = "auto")]
    pub method: MethodArg,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioArgs {
    /// I, II, III or IV.
    #[arg(long)]
    pub scenario: String,
    #[arg(long, value_delimiter = ',', default_value = "gumbel,clayton,frank")]
    pub data_families: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "gumbel,clayton,frank")]
    pub model_families: Vec<String>,
    /// Case labels; all when absent.
    #[arg(long, value_delimiter = ',')]
    pub cases: Option<Vec<char>>,
    #[arg(long, value_delimiter = ',', default_value = "32,128,512")]
    pub n_grid: Vec<usize>,
    #[arg(long, default_value_t = 500)]
    pub replications: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,0.75")]
    pub tau_levels: Vec<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    /// Tests to compute; scenario defaults when absent.
    #[arg(long, value_delimiter = ',')]
    pub tests: Option<Vec<String>>,
    #[arg(long, default_value_t = 5000)]
    pub mc_replicates: usize,
    #[arg(long, default_value_t = 100_000)]
    pub sigma_n: usize,
    /// Also write one wide table per test next to the output.
    #[arg(long)]
    pub wide: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct RerunArgs {
    /// Manifest written by an earlier run.
    pub manifest: String,
}

/// Resolved configuration echoed into the manifest.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub version: String,
    pub seed: u64,
    pub jobs: usize,
    pub out: Option<String>,
    pub format: Format,
    #[serde(flatten)]
    pub command: Command,
}

impl Command {
    pub fn default_format(&self) -> Format {
        match self {
            Command::Sample(_) | Command::Power(_) | Command::Detscan(_) | Command::Scenario(_) => Format::Csv,
            _ => Format::Json,
        }
    }
}
