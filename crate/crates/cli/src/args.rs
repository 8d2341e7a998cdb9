use std::path::PathBuf;

use adp_core::adp::Horizon;
use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "adp", version, about = "Simulate and validate action-driven processes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample trajectories from a tabular model.
    Simulate(SimulateArgs),
    /// Cross-check the IAA, AAA and uniformized samplers.
    ValidateEquivalence(ValidateArgs),
    /// Train a softmax policy by KL minimization.
    RlTrain(RlTrainArgs),
    /// Evaluate a policy: exact and sampled KL, max-ent objective.
    RlEval(RlEvalArgs),
    /// Simulate a spiking network and summarize its spike trains.
    SpikingDemo(SpikingArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub seed: u64,
    /// Worker threads; outputs do not depend on this.
    #[arg(long, default_value_t = 1)]
    pub streams: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct HorizonArgs {
    #[arg(long, conflicts_with = "horizon_time")]
    pub horizon_arrivals: Option<usize>,
    #[arg(long)]
    pub horizon_time: Option<f64>,
}

impl HorizonArgs {
    pub fn horizon(&self) -> Result<Horizon> {
        match (self.horizon_arrivals, self.horizon_time) {
            (Some(n), None) => Ok(Horizon::MaxArrivals(n)),
            (None, Some(t)) if t > 0.0 && t.is_finite() => Ok(Horizon::MaxTime(t)),
            (None, Some(t)) => bail!("--horizon-time must be positive and finite, got {t}"),
            _ => bail!("one of --horizon-arrivals or --horizon-time is required"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplerChoice {
    Iaa,
    Aaa,
    Unif,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = SamplerChoice::Iaa)]
    pub sampler: SamplerChoice,
    #[arg(long)]
    pub lambda_bar: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[command(flatten)]
    pub horizon: HorizonArgs,
    #[arg(long, default_value_t = 1)]
    pub replications: usize,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Fault {
    /// AAA draws actions from the reversed action pmf.
    SwappedAaaPmf,
    /// Uniformize at half the required rate bound.
    LowLambdaBar,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    /// Uniformization rates to test.
    #[arg(long, value_delimiter = ',', default_values_t = [8.0, 16.0])]
    pub lambda_bar: Vec<f64>,
    /// Trajectory length for the uniformization comparison.
    #[arg(long, default_value_t = 10.0)]
    pub horizon_time: f64,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = adp_core::stats::KS_CRITICAL_SCALE)]
    pub ks_critical_scale: f64,
    #[arg(long, default_value_t = adp_core::stats::CHI2_P_FLOOR)]
    pub chi2_p_floor: f64,
    #[arg(long, value_enum)]
    pub inject_fault: Option<Fault>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeChoice {
    Exact,
    Reinforce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyClassChoice {
    Stationary,
    TimeVarying,
}

#[derive(Debug, Clone, Args)]
pub struct RlTrainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 1e6)]
    pub rho: f64,
    /// Number of arrivals per trajectory.
    #[arg(long, default_value_t = 1)]
    pub horizon_arrivals: usize,
    #[arg(long, default_value_t = 2_000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1.0)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = ModeChoice::Exact)]
    pub mode: ModeChoice,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long, value_enum, default_value_t = PolicyClassChoice::Stationary)]
    pub policy_class: PolicyClassChoice,
    /// Also train at each of these rates and report the gap to the
    /// max-ent stationary optimum.
    #[arg(long, value_delimiter = ',')]
    pub rho_sweep: Vec<f64>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Args)]
pub struct RlEvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Policy JSON with a `logits` field.
    #[arg(long)]
    pub policy: PathBuf,
    #[arg(long, default_value_t = 1e6)]
    pub rho: f64,
    #[arg(long, default_value_t = 1)]
    pub horizon_arrivals: usize,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SpikingArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    pub horizon_time: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, value_enum, default_value_t = SamplerChoice::Aaa)]
    pub sampler: SamplerChoice,
    #[arg(long, default_value_t = 100)]
    pub replications: usize,
    #[arg(long, default_value_t = 20)]
    pub isi_bins: usize,
    #[arg(long, default_value_t = 999)]
    pub permutations: usize,
    #[command(flatten)]
    pub run: RunArgs,
}
