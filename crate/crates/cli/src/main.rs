mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sofrme_core::expansion::BasisKind;
use sofrme_core::mecorrect::{Extrapolant, MemFamily, MemMethod};
use sofrme_core::regress::{Family, Link};
use sofrme_core::ErrorKind;

/// Scalar-on-function regression with measurement-error corrections.
#[derive(Debug, Parser)]
#[command(name = "sofrme", version)]
pub struct Cli {
    /// Worker threads for the parallel estimators.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic dataset from a JSON scenario.
    Simulate(SimulateArgs),
    /// Generalized scalar-on-function regression.
    FitGlm(FitGlmArgs),
    /// Quantile scalar-on-function regression.
    FitQr(FitQrArgs),
    /// MEM substitution from replicated surrogates, then a GLM fit.
    MeMem(MeMemArgs),
    /// IV-SIMEX quantile regression.
    MeSimex(MeSimexArgs),
    /// Corrected-loss quantile regression.
    MeCls(MeClsArgs),
    /// Instrumental-variable functional linear regression.
    MeIv(MeIvArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Directory receiving the CSV files.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Points of the uniform grid for the true coefficient table.
    #[arg(long, default_value_t = 101)]
    pub beta_grid: usize,
}

#[derive(Debug, Args)]
pub struct Output {
    /// Result JSON; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the estimated coefficient function as a CSV table.
    #[arg(long)]
    pub emit_beta: Option<PathBuf>,
    /// Points of the uniform grid for `--emit-beta`.
    #[arg(long, default_value_t = 101)]
    pub beta_grid: usize,
    /// Domain start and period; inferred from the grid when omitted.
    #[arg(long, num_args = 2, value_names = ["T0", "PERIOD"], allow_negative_numbers = true)]
    pub domain: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct BasisArgs {
    #[arg(long, default_value = "bspline")]
    pub basis: BasisKind,
    /// Number of basis functions (components for fpc).
    #[arg(long, default_value_t = 8)]
    pub order: usize,
    /// B-spline degree.
    #[arg(long = "bs-degree", default_value_t = 3)]
    pub degree: usize,
}

#[derive(Debug, Args)]
pub struct Response {
    /// Response file `id,y`.
    #[arg(long)]
    pub y: PathBuf,
    /// Scalar covariates `id,z1,...`.
    #[arg(long)]
    pub z: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GlmArgs {
    #[arg(long, default_value = "gaussian")]
    pub family: Family,
    /// Defaults to the canonical link.
    #[arg(long)]
    pub link: Option<Link>,
}

#[derive(Debug, Args)]
pub struct FitGlmArgs {
    #[command(flatten)]
    pub data: Response,
    /// Functional covariate, wide layout.
    #[arg(long)]
    pub x: PathBuf,
    #[command(flatten)]
    pub basis: BasisArgs,
    #[command(flatten)]
    pub glm: GlmArgs,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct FitQrArgs {
    #[command(flatten)]
    pub data: Response,
    #[arg(long)]
    pub x: PathBuf,
    #[command(flatten)]
    pub basis: BasisArgs,
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct MeMemArgs {
    #[command(flatten)]
    pub data: Response,
    /// Replicated surrogate, long layout.
    #[arg(long)]
    pub w: PathBuf,
    #[command(flatten)]
    pub basis: BasisArgs,
    #[command(flatten)]
    pub glm: GlmArgs,
    #[arg(long, default_value = "UP_MEM")]
    pub method: MemMethod,
    /// Window width for MP_MEM.
    #[arg(long, default_value_t = 3)]
    pub d: usize,
    /// Distribution of the replicates.
    #[arg(long, default_value = "gaussian")]
    pub family_w: MemFamily,
    #[arg(long)]
    pub smooth: bool,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct MeSimexArgs {
    #[command(flatten)]
    pub data: Response,
    /// Surrogate curves; replicates in a long file are averaged.
    #[arg(long)]
    pub w: PathBuf,
    /// Instrument curves, wide layout.
    #[arg(long)]
    pub m: PathBuf,
    #[command(flatten)]
    pub basis: BasisArgs,
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,1.5,2")]
    pub lambda: Vec<f64>,
    /// Pseudo-replicates per noise level.
    #[arg(long = "B", default_value_t = 50)]
    pub b: usize,
    #[arg(long, default_value = "quadratic")]
    pub extrapolant: Extrapolant,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct MeClsArgs {
    #[command(flatten)]
    pub data: Response,
    /// Replicated surrogate, long layout.
    #[arg(long)]
    pub w: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    /// Candidate FPC counts; defaults to 1..=min(5, n-1, m).
    #[arg(long, value_delimiter = ',')]
    pub grid_k: Option<Vec<usize>>,
    /// Candidate bandwidths; defaults to {0.05, 0.1, 0.2, 0.4} times sd(Y).
    #[arg(long, value_delimiter = ',')]
    pub grid_h: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct MeIvArgs {
    /// Response file `id,y`.
    #[arg(long)]
    pub y: PathBuf,
    /// Surrogate curves; replicates in a long file are averaged.
    #[arg(long)]
    pub w: PathBuf,
    /// Instrument curves, wide layout.
    #[arg(long)]
    pub m: PathBuf,
    #[command(flatten)]
    pub basis: BasisArgs,
    #[arg(long)]
    pub bootstrap: bool,
    #[arg(long, default_value_t = 500)]
    pub n_boot: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Fit an intercept by centring.
    #[arg(long)]
    pub intercept: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub output: Output,
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sofrme: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
