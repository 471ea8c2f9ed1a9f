use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "exitperron", version, about = "Exit-time stochastic control: solve, simulate, verify")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the discrete HJB problem; writes value.csv, policy.csv, residual.json.
    Solve(SolveArgs),
    /// Monte Carlo value estimate; writes batch.csv, estimate.json.
    Simulate(SimulateArgs),
    /// Stochastic Perron checks.
    #[command(subcommand)]
    Verify(VerifyCommand),
    /// Closed-form solution where one is registered; writes oracle.csv.
    Oracle(OracleArgs),
    /// Grid refinement table; writes refine.csv.
    Refine(RefineArgs),
}

#[derive(Debug, Subcommand)]
pub enum VerifyCommand {
    /// Submartingale test of a candidate subsolution; writes sub.json.
    Sub(MartingaleArgs),
    /// Supermartingale test of a candidate supersolution; writes super.json.
    Super(MartingaleArgs),
    /// Envelope sandwich u ≤ v̂ ≤ w; writes sandwich.json.
    Sandwich(SandwichArgs),
    /// Dynamic-programming residuals of the solved value; writes dpp.json.
    Dpp(DppArgs),
    /// Viscosity probes with quadratic test functions; writes viscosity.json.
    Viscosity(ViscosityArgs),
}

/// Problem source, seed and output directory, shared by every command.
#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// Catalog problem: bm-1d, drift-control-1d, const-reward-1d, disc-2d.
    #[arg(long, conflicts_with = "file", required_unless_present = "file")]
    pub problem: Option<String>,
    /// Problem file.
    #[arg(long)]
    pub file: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Evaluation {
    Direct,
    RedBlack,
}

/// Grid resolution and solver settings.
#[derive(Debug, Clone, Args, Serialize)]
pub struct SolverArgs {
    /// Nodes per axis.
    #[arg(long, default_value_t = 65)]
    pub res: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 200)]
    pub max_outer: usize,
    #[arg(long, value_enum, default_value_t = Evaluation::Direct)]
    pub evaluation: Evaluation,
    /// Sweep cap per policy evaluation with `--evaluation red-black`.
    #[arg(long, default_value_t = 1_000_000)]
    pub max_sweeps: usize,
}

/// Euler–Maruyama settings.
#[derive(Debug, Clone, Args, Serialize)]
pub struct SimArgs {
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long, default_value_t = 10_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 20.0)]
    pub tmax: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SolveArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverArgs,
    /// Also write value.gnuplot.
    #[arg(long)]
    pub gnuplot: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub sim: SimArgs,
    /// Start point, coordinates separated by ','.
    #[arg(long)]
    pub x: String,
    /// `optimal` (policy of a grid solve at --res) or `const:a1,a2,...`.
    #[arg(long, default_value = "optimal")]
    pub control: String,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MartingaleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub sim: SimArgs,
    /// Candidate field (value.csv layout on the --res grid); defaults to the
    /// constant sub- or supersolution.
    #[arg(long)]
    pub field: Option<PathBuf>,
    /// Controls, separated by ' ': `optimal`, `constants` (all of A_h), or
    /// `const:a1,a2,...`. The sub test uses the first entry only.
    #[arg(long)]
    pub controls: Option<String>,
    /// Start times are uniform on [0, t0-max].
    #[arg(long, default_value_t = 0.1)]
    pub t0_max: f64,
    /// Exit-bias coefficient; defaults to 0.5 (‖u‖∞ + ‖f‖∞/β).
    #[arg(long)]
    pub c_bias: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SandwichArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub sim: SimArgs,
    /// Lower field file; replaces the upward envelope.
    #[arg(long)]
    pub lower: Option<PathBuf>,
    /// Upper field file; replaces the downward envelope.
    #[arg(long)]
    pub upper: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub rounds: usize,
    /// Bump radii in multiples of the grid spacing, separated by ','.
    #[arg(long, default_value = "2,4,8")]
    pub radii: String,
    #[arg(long, default_value_t = 0.5)]
    pub height_fraction: f64,
    /// Base tolerance; 3·SE of the martingale tests is added.
    #[arg(long, default_value_t = 1e-2)]
    pub eps: f64,
    #[arg(long, default_value_t = 0.1)]
    pub t0_max: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DppArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub sim: SimArgs,
    /// Points separated by ';', coordinates by ','. Defaults to
    /// --interior-points evenly spaced points plus the two boundary points
    /// of the same segment.
    #[arg(long)]
    pub points: Option<String>,
    #[arg(long, default_value_t = 5)]
    pub interior_points: usize,
    #[arg(long, default_value_t = 0.5)]
    pub c_bias: f64,
    #[arg(long, default_value_t = 10.0)]
    pub c_h: f64,
    /// Policies maximized over, separated by ' ' (same syntax as verify sub).
    #[arg(long, default_value = "optimal")]
    pub policies: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Candidate {
    /// Sampled closed-form solution.
    Oracle,
    /// Grid solution at --res.
    Solution,
    /// The file given by --field.
    File,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ViscosityArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverArgs,
    #[arg(long, value_enum, default_value_t = Candidate::Solution)]
    pub candidate: Candidate,
    #[arg(long)]
    pub field: Option<PathBuf>,
    /// Hessian shifts, separated by ','.
    #[arg(long, default_value = "1e-6,1e-2,1")]
    pub lambdas: String,
    #[arg(long = "visc-tol", default_value_t = 1e-3)]
    pub visc_tol: f64,
    /// Also probe boundary nodes (generalized boundary condition).
    #[arg(long)]
    pub include_boundary: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OracleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 129)]
    pub res: usize,
    /// Evaluation points (';' between points, ',' between coordinates)
    /// instead of the grid nodes.
    #[arg(long)]
    pub x: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RefineArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Nested resolutions, separated by ','.
    #[arg(long = "res", default_value = "17,33,65,129")]
    pub resolutions: String,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 200)]
    pub max_outer: usize,
    /// Also write refine.gnuplot.
    #[arg(long)]
    pub gnuplot: bool,
}
