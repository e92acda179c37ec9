use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "wvcalc", version, about = "One-sided Stieltjes calculus, spectra and stochastic fields on the torus")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Eigenvalues from the roots of the characteristic function (JSON).
    Spectrum(SpectrumArgs),
    /// Eigenvalues of the discrete pencil at m, 2m, 4m with extrapolation (JSON).
    OracleSpectrum(OracleArgs),
    /// Eigenfunctions sampled on the grid (CSV).
    Eigfun(EigfunArgs),
    /// Diagonal polynomials at 1 and the Taylor bound chain (JSON).
    Taylor(TaylorArgs),
    /// The four generalized trigonometric functions on the grid (CSV).
    Trig(TrigArgs),
    /// Spectral coefficients of a function (CSV: i, lambda, gamma, alpha).
    Project(ProjectArgs),
    /// Fractional Sobolev norm with partial sums (JSON).
    Norm(NormArgs),
    /// Sample paths of the W-Brownian motion (CSV).
    SimulateBw(SimulateArgs),
    /// Samples of the fractional field L^{-beta} applied to white noise (CSV + JSON report).
    SpdeSample(SpdeArgs),
    /// Product-basis multi-indices and trace sums (JSON).
    TensorSpectrum(TensorSpectrumArgs),
    /// Samples of the d-dimensional fractional field (flattened CSV).
    TensorSample(TensorSampleArgs),
    /// Run the invariant suite; exit 2 if any item fails (JSON).
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Source {
    /// Series eigenbasis when it supplies enough modes, else the pencil.
    Auto,
    Series,
    Pencil,
}

#[derive(Debug, Args)]
pub struct MeasureArgs {
    /// W measure document (defaults to the identity).
    #[arg(long, value_parser = existing_file)]
    pub w: Option<PathBuf>,
    /// V measure document (defaults to the identity).
    #[arg(long, value_parser = existing_file)]
    pub v: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TolArgs {
    /// Series truncation tolerance.
    #[arg(long, default_value_t = 1e-12, value_parser = positive)]
    pub tol_series: f64,
    /// Rank / root acceptance tolerance.
    #[arg(long, default_value_t = 1e-8, value_parser = positive)]
    pub tol_rank: f64,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[command(flatten)]
    pub measures: MeasureArgs,
    #[command(flatten)]
    pub tol: TolArgs,
    #[arg(long, default_value_t = 500.0, value_parser = positive)]
    pub zmax: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub measures: MeasureArgs,
    #[arg(long, default_value_t = 256, value_parser = grid_m)]
    pub m: usize,
    #[arg(long, default_value_t = 6, value_parser = count)]
    pub modes: usize,
    /// Constant diffusion coefficient H.
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    pub h: f64,
    #[arg(long, default_value_t = 0.0, value_parser = non_negative)]
    pub kappa: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EigfunArgs {
    #[command(flatten)]
    pub measures: MeasureArgs,
    #[command(flatten)]
    pub tol: TolArgs,
    #[arg(long, default_value_t = 256, value_parser = grid_m)]
    pub m: usize,
    #[arg(long, default_value_t = 5, value_parser = count)]
    pub modes: usize,
    #[arg(long, default_value_t = 600.0, value_parser = positive)]
    pub zmax: f64,
    #[arg(long, value_enum, default_value_t = Source::Auto)]
    pub source: Source,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TaylorArgs {
    #[command(flatten)]
    pub measures: MeasureArgs,
    /// Highest n in the chain F_{2n}(1,1) ≤ F_2(1,1)^n / n!.
    #[arg(long, default_value_t = 12, value_parser = count)]
    pub order: usize,
    /// Points x at which F_k(x,x) is tabulated.
    #[arg(long, value_delimiter = ',', value_parser = unit_interval)]
    pub x: Vec<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrigArgs {
    #[command(flatten)]
    pub measures: MeasureArgs,
    #[command(flatten)]
    pub tol: TolArgs,
    #[arg(long, default_value_t = 256, value_parser = grid_m)]
    pub m: usize,
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[command(flatten)]
    pub measures: MeasureArgs,
    #[command(flatten)]
    pub tol: TolArgs,
    /// Function to expand: builtin:NAME or a CSV file with header x,value.
    #[arg(long)]
    pub f: String,
    #[arg(long, default_value_t = 256, value_parser = grid_m)]
    pub m: usize,
    #[arg(long, default_value_t = 64, value_parser = count)]
    pub modes: usize,
    #[arg(long, default_value_t = 600.0, value_parser = positive)]
    pub zmax: f64,
    #[arg(long, value_enum, default_value_t = Source::Auto)]
    pub source: Source,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NormArgs {
    #[command(flatten)]
    pub project: ProjectArgs,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub s: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// W measure document (defaults to the identity).
    #[arg(long, alias = "measure", value_parser = existing_file)]
    pub w: Option<PathBuf>,
    #[arg(long, value_parser = existing_file)]
    pub v: Option<PathBuf>,
    #[arg(long, default_value_t = 256, value_parser = grid_m)]
    pub m: usize,
    #[arg(long, default_value_t = 1, value_parser = count)]
    pub paths: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SpdeArgs {
    #[command(flatten)]
    pub measures: MeasureArgs,
    #[command(flatten)]
    pub tol: TolArgs,
    #[arg(long)]
    pub beta: f64,
    #[arg(long, default_value_t = 1.0, value_parser = non_negative)]
    pub kappa: f64,
    #[arg(long, default_value_t = 1)]
    pub d: usize,
    #[arg(long, default_value_t = 256, value_parser = grid_m)]
    pub m: usize,
    #[arg(long, default_value_t = 100, value_parser = count)]
    pub modes: usize,
    #[arg(long, default_value_t = 1, value_parser = count)]
    pub fields: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 600.0, value_parser = positive)]
    pub zmax: f64,
    #[arg(long, value_enum, default_value_t = Source::Auto)]
    pub source: Source,
    /// Field CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Moment report JSON (defaults to the CSV path with a .json extension).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TensorAxes {
    /// Per-axis W documents: none (identity), one (shared) or exactly d.
    #[arg(long, value_parser = existing_file)]
    pub w: Vec<PathBuf>,
    /// Per-axis V documents: none (identity), one (shared) or exactly d.
    #[arg(long, value_parser = existing_file)]
    pub v: Vec<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long, default_value_t = 64, value_parser = grid_m)]
    pub m: usize,
    /// Modes per axis.
    #[arg(long, default_value_t = 32, value_parser = count)]
    pub modes: usize,
    /// Upper limit on the product eigenvalue; defaults to the smallest axis maximum.
    #[arg(long, value_parser = positive)]
    pub cutoff: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TensorSpectrumArgs {
    #[command(flatten)]
    pub axes: TensorAxes,
    /// Exponents for the trace sums; defaults to d/2 and d/2 + 1/2.
    #[arg(long, value_delimiter = ',', value_parser = positive)]
    pub s: Vec<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TensorSampleArgs {
    #[command(flatten)]
    pub axes: TensorAxes,
    #[arg(long)]
    pub beta: f64,
    #[arg(long, default_value_t = 1, value_parser = count)]
    pub fields: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub measures: MeasureArgs,
    #[command(flatten)]
    pub tol: TolArgs,
    #[arg(long, default_value_t = 128, value_parser = grid_m)]
    pub m: usize,
    #[arg(long, default_value_t = 20000, value_parser = count)]
    pub paths: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 600.0, value_parser = positive)]
    pub zmax: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn existing_file(s: &str) -> Result<PathBuf, String> {
    let p = PathBuf::from(s);
    if p.is_file() {
        Ok(p)
    } else {
        Err(format!("no such file: {s}"))
    }
}

fn parse_f64(s: &str) -> Result<f64, String> {
    s.parse::<f64>().map_err(|e| format!("{s}: {e}"))
}

fn positive(s: &str) -> Result<f64, String> {
    let x = parse_f64(s)?;
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(format!("{s} must be positive and finite"))
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    let x = parse_f64(s)?;
    if x >= 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(format!("{s} must be non-negative and finite"))
    }
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let x = parse_f64(s)?;
    if (0.0..=1.0).contains(&x) {
        Ok(x)
    } else {
        Err(format!("{s} is outside [0, 1]"))
    }
}

fn grid_m(s: &str) -> Result<usize, String> {
    let m: usize = s.parse().map_err(|e| format!("{s}: {e}"))?;
    if m >= 64 {
        Ok(m)
    } else {
        Err(format!("grid resolution {m} is below the minimum 64"))
    }
}

fn count(s: &str) -> Result<usize, String> {
    let n: usize = s.parse().map_err(|e| format!("{s}: {e}"))?;
    if n >= 1 {
        Ok(n)
    } else {
        Err("must be at least 1".into())
    }
}
