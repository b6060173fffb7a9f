use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use levelcross::crossings::CrossingMode;
use levelcross::kernels::KernelFamily;
use levelcross::quadrature::{QuadratureSpec, TailPolicy};

use crate::Failure;

#[derive(Parser, Debug)]
#[command(name = "levelcross", version, about = "Level-crossing statistics of smooth stationary Gaussian processes")]
pub struct Cli {
    /// Worker threads for sweeps, simulations and verification (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Flat `key = value` file mirroring the flags; flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Mean rate, long-time variance rate and Fano factor at one level.
    Stats(StatsArgs),
    /// Evaluate statistics on a 1D or 2D parameter grid and write CSV or JSON.
    Sweep(SweepArgs),
    /// Monte Carlo estimates next to the analytic values.
    Simulate(SimulateArgs),
    /// Run the numerical cross-check suites.
    Verify(VerifyArgs),
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyName {
    Sdho,
    Ou,
    Rq,
    Se,
}

#[derive(Args, Debug, Clone)]
pub struct KernelArgs {
    #[arg(long, value_enum)]
    pub kernel: FamilyName,
    /// sdho: natural frequency (default 1)
    #[arg(long, allow_negative_numbers = true)]
    pub omega0: Option<f64>,
    /// sdho: damping ratio
    #[arg(long, allow_negative_numbers = true)]
    pub zeta: Option<f64>,
    /// sdho: noise intensity (default 1)
    #[arg(long, allow_negative_numbers = true)]
    pub theta: Option<f64>,
    /// ou, rq, se: amplitude (default 1)
    #[arg(long, allow_negative_numbers = true)]
    pub sigma: Option<f64>,
    /// ou: noise correlation time
    #[arg(long, allow_negative_numbers = true)]
    pub tau_f: Option<f64>,
    /// ou: mean-reversion time (default 1)
    #[arg(long, allow_negative_numbers = true)]
    pub tau_e: Option<f64>,
    /// ou: tau_f / tau_e, an alternative to --tau-f
    #[arg(long, allow_negative_numbers = true)]
    pub kappa: Option<f64>,
    /// rq, se: length scale (default 1)
    #[arg(long, allow_negative_numbers = true)]
    pub tau: Option<f64>,
    /// rq: shape parameter
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
}

/// Parameter names accepted by `set` and by sweep axes.
pub const PARAMS: [&str; 9] = ["omega0", "zeta", "theta", "sigma", "tau_f", "tau_e", "kappa", "tau", "alpha"];

impl KernelArgs {
    pub fn set(&mut self, name: &str, value: f64) -> bool {
        let slot = match name {
            "omega0" => &mut self.omega0,
            "zeta" => &mut self.zeta,
            "theta" => &mut self.theta,
            "sigma" => &mut self.sigma,
            "tau_f" => &mut self.tau_f,
            "tau_e" => &mut self.tau_e,
            "kappa" => &mut self.kappa,
            "tau" => &mut self.tau,
            "alpha" => &mut self.alpha,
            _ => return false,
        };
        *slot = Some(value);
        true
    }

    pub fn family(&self) -> Result<KernelFamily, Failure> {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Failure::Usage(format!("--{name} is required for --kernel {:?}", self.kernel).to_lowercase()))
        };
        let sigma = self.sigma.unwrap_or(1.0);
        let tau = self.tau.unwrap_or(1.0);
        Ok(match self.kernel {
            FamilyName::Sdho => KernelFamily::Sdho {
                omega0: self.omega0.unwrap_or(1.0),
                zeta: need(self.zeta, "zeta")?,
                theta: self.theta.unwrap_or(1.0),
            },
            FamilyName::Ou => {
                let tau_e = self.tau_e.unwrap_or(1.0);
                let tau_f = match (self.tau_f, self.kappa) {
                    (Some(_), Some(_)) => return Err(Failure::Usage("give either --tau-f or --kappa, not both".into())),
                    (Some(t), None) => t,
                    (None, Some(k)) => k * tau_e,
                    (None, None) => return Err(Failure::Usage("--tau-f or --kappa is required for --kernel ou".into())),
                };
                KernelFamily::OuMeanRevert { sigma, tau_f, tau_e }
            }
            FamilyName::Rq => KernelFamily::RationalQuadratic { sigma, tau, alpha: need(self.alpha, "alpha")? },
            FamilyName::Se => KernelFamily::SquaredExponential { sigma, tau },
        })
    }
}

#[derive(Args, Debug, Clone)]
pub struct LevelArgs {
    /// Threshold level in units of x.
    #[arg(long, allow_negative_numbers = true)]
    pub u: Option<f64>,
    /// Threshold in units of the kernel amplitude (u = psi * sigma).
    #[arg(long, allow_negative_numbers = true, conflicts_with = "u")]
    pub psi: Option<f64>,
    #[arg(long, default_value = "up")]
    pub mode: CrossingMode,
}

#[derive(Args, Debug, Clone)]
pub struct QuadArgs {
    #[arg(long, default_value_t = 1e-9, allow_negative_numbers = true)]
    pub rel_tol: f64,
    #[arg(long, default_value_t = 1e-12, allow_negative_numbers = true)]
    pub abs_tol: f64,
    /// Truncate lag integrals at this multiple of the slowest time scale.
    #[arg(long, allow_negative_numbers = true)]
    pub tail_cutoff: Option<f64>,
}

impl QuadArgs {
    pub fn spec(&self) -> Result<QuadratureSpec, Failure> {
        let mut spec = QuadratureSpec::with_tolerances(self.rel_tol, self.abs_tol);
        if let Some(multiple) = self.tail_cutoff {
            spec.tail = TailPolicy::FixedCutoff { multiple };
        }
        spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Args, Debug, Clone)]
pub struct OutputArgs {
    #[arg(long)]
    pub json: bool,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct StatsArgs {
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub level: LevelArgs,
    /// Also report the count statistics on [0, T].
    #[arg(long, allow_negative_numbers = true)]
    pub horizon: Option<f64>,
    #[command(flatten)]
    pub quad: QuadArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    MeanRate,
    VarRate,
    Fano,
}

#[derive(Args, Debug, Clone)]
pub struct SweepArgs {
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub level: LevelArgs,
    /// NAME:MIN:MAX:POINTS[:lin|log]; NAME is u, psi or a kernel parameter. Give once or twice.
    #[arg(long, required = true)]
    pub axis: Vec<String>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "mean-rate,var-rate,fano")]
    pub quantities: Vec<Quantity>,
    #[command(flatten)]
    pub quad: QuadArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug, Clone)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub kernel: KernelArgs,
    /// Comma-separated threshold levels, all counted on the same paths.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "0")]
    pub u: Vec<f64>,
    #[arg(long, default_value = "up")]
    pub mode: CrossingMode,
    #[arg(long, default_value_t = 120.0, allow_negative_numbers = true)]
    pub horizon: f64,
    /// Time step as a fraction of the slowest time scale.
    #[arg(long, default_value_t = 0.01, allow_negative_numbers = true)]
    pub dt_factor: f64,
    #[arg(long, default_value_t = 5000)]
    pub trials: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Bridge bisection depth near the level (oscillator and OU sources).
    #[arg(long, default_value_t = 6)]
    pub refine_depth: u32,
    /// Sample sdho and ou paths by circulant embedding instead of the exact SDE step.
    #[arg(long)]
    pub circulant: bool,
    #[arg(long, default_value_t = 1000)]
    pub bootstrap: usize,
    /// Write trial 0 as `t x` columns.
    #[arg(long, value_name = "FILE")]
    pub dump_path: Option<PathBuf>,
    #[command(flatten)]
    pub quad: QuadArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    PlaneIntegrals,
    Lemmas,
    Special,
    Integrands,
    ZeroLevel,
    Claims,
    Reentrance,
    Invariance,
    Asymptotic,
    MonteCarlo,
    All,
}

#[derive(Args, Debug, Clone)]
pub struct VerifyArgs {
    /// Suites to run (default: all except monte-carlo).
    #[arg(long, value_enum, value_delimiter = ',')]
    pub suite: Vec<Suite>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Trials for the monte-carlo suite.
    #[arg(long, default_value_t = 5000)]
    pub trials: usize,
    #[arg(long, default_value_t = 6)]
    pub refine_depth: u32,
    /// Print the per-check notes of each suite.
    #[arg(long)]
    pub verbose: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}
