//! Command-line arguments. Every argument struct is also serializable so a
//! report can echo the exact configuration that produced it.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Parser, Serialize, Deserialize)]
#[command(name = "scboot", version, about = "Simultaneous inference for time-varying coefficient M-regression")]
pub struct Cli {
    /// Worker threads (defaults to SCBOOT_THREADS, then to all cores).
    #[arg(long, env = "SCBOOT_THREADS", global = true)]
    pub threads: Option<usize>,
    /// Append a JSON-lines report to this file.
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,
    /// Suppress the human-readable summary.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "lowercase")]
pub enum Command {
    /// Test that the contrasted coefficients equal a given function.
    Eft(EftArgs),
    /// Lack-of-fit test against a named parametric family.
    Loft(LoftArgs),
    /// Lack-of-fit test against polynomials of a given degree.
    Poly(PolyArgs),
    /// Test a qualitative shape of one contrasted coefficient.
    Qt(QtArgs),
    /// Monte Carlo rejection rates on synthetic designs.
    Simulate(SimulateArgs),
    /// Report the data-driven bandwidth choices.
    Bandwidth(BandwidthArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Eft(_) => "eft",
            Command::Loft(_) => "loft",
            Command::Poly(_) => "poly",
            Command::Qt(_) => "qt",
            Command::Simulate(_) => "simulate",
            Command::Bandwidth(_) => "bandwidth",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub input: PathBuf,
    /// Response column.
    #[arg(long, default_value = "y")]
    pub response: String,
    /// Covariate columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// Optional time column (checked for order; times are taken as i/n).
    #[arg(long)]
    pub time: Option<String>,
    /// Do not prepend an intercept column.
    #[arg(long)]
    pub no_intercept: bool,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct FitArgs {
    /// squared, quantile:TAU, huber:THRESHOLD, expectile:ALPHA or lq:Q.
    #[arg(long, default_value = "squared")]
    pub loss: String,
    /// epanechnikov or quartic.
    #[arg(long, default_value = "epanechnikov")]
    pub kernel: String,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ContrastArgs {
    /// Coefficient to test, by covariate name, `intercept` or `betaK`; repeatable.
    #[arg(long = "col")]
    pub cols: Vec<String>,
    /// Explicit contrast rows, e.g. "0,1,0;0,0,1".
    #[arg(long)]
    pub contrast: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct InferenceArgs {
    #[command(flatten)]
    pub contrast: ContrastArgs,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Bootstrap replications.
    #[arg(long, default_value_t = 1000)]
    pub bootstrap: usize,
    /// Estimation bandwidth: a number or `auto` (cross-validation).
    #[arg(long, default_value = "auto")]
    pub b: String,
    /// Bootstrap bandwidth: a number, `half` (b / 2) or `auto` (minimum volatility).
    #[arg(long, default_value = "auto")]
    pub c: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EftArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub inference: InferenceArgs,
    /// Constant reference values, one per contrast row.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub value: Vec<f64>,
    /// CSV of reference values at t_i = i/n, one column per contrast row.
    #[arg(long)]
    pub reference_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct LoftArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub inference: InferenceArgs,
    /// constant, linear, quadratic or cubic.
    #[arg(long)]
    pub family: String,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct PolyArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub inference: InferenceArgs,
    #[arg(long)]
    pub degree: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct QtArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub inference: InferenceArgs,
    /// nonnegative, nonpositive, increasing, decreasing, convex or concave.
    #[arg(long)]
    pub shape: String,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BandwidthArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub contrast: ContrastArgs,
    /// Minimum-volatility window.
    #[arg(long, default_value_t = 5)]
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// I, II or III.
    #[arg(long)]
    pub case: String,
    #[arg(long, default_value_t = 300)]
    pub n: usize,
    #[command(flatten)]
    pub fit: FitArgs,
    /// eft, constancy, linearity, polyQ or qt-SHAPE.
    #[arg(long = "table", default_value = "eft")]
    pub test: String,
    /// shift, linear, quadratic or dip.
    #[arg(long, default_value = "shift")]
    pub perturbation: String,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub deltas: Vec<f64>,
    #[arg(long, default_value_t = 500)]
    pub reps: usize,
    #[arg(long, default_value_t = 500)]
    pub bootstrap: usize,
    /// Levels reported from the same replications.
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.1")]
    pub alphas: Vec<f64>,
    /// `auto` (cross-validated b, minimum-volatility c), `half`, or `B,C`.
    #[arg(long, default_value = "auto")]
    pub bandwidth: String,
    /// Multiplier applied to the cross-validated b.
    #[arg(long, default_value_t = 1.0)]
    pub factor: f64,
    /// Test all coefficients jointly instead of the slope alone.
    #[arg(long)]
    pub joint: bool,
    #[arg(long)]
    pub seed: u64,
    /// CSV file for the rejection table.
    #[arg(long)]
    pub output: Option<PathBuf>,
}
