use adp_core::maxent::{
    kl_closed_form, kl_decomposition, maxent_objective, maxent_stationary_optimum, model_log_density, policy_gap,
    sample_true_trajectory, soft_value_iteration, train_policy, train_time_varying_policy, true_log_density,
    GradientMode, KlConfig, KlDecomposition, McEstimate, Policy, PolicySchedule, RlError, TabularMdp,
    TimeVaryingPolicy, TrainConfig, TrainLogEntry,
};
use adp_core::rng::stream_rng;
use adp_core::stats::mean_stderr;
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::args::{ModeChoice, PolicyClassChoice, RlEvalArgs, RlTrainArgs};
use crate::output::{csv_writer, ensure_dir, read_json, run_jobs, stream_id, write_json};

const MC_CHUNK: usize = 10_000;
/// Steps for the max-ent stationary reference in the rate sweep.
const REFERENCE_STEPS: usize = 200_000;

pub fn load_mdp(path: &std::path::Path) -> Result<TabularMdp> {
    let mdp: TabularMdp = read_json(path)?;
    mdp.validate()
        .with_context(|| format!("invalid mdp {}", path.display()))?;
    Ok(mdp)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolicyFile {
    Stationary { logits: Vec<Vec<f64>> },
    TimeVarying { logits: Vec<Vec<Vec<f64>>> },
}

#[derive(Serialize)]
struct PolicyOut<'a, L: Serialize, P: Serialize> {
    policy_class: &'a str,
    logits: L,
    probabilities: P,
}

fn write_log(path: &std::path::Path, log: &[TrainLogEntry]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for e in log {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}

fn train_config(args: &RlTrainArgs) -> TrainConfig {
    TrainConfig {
        learning_rate: args.lr,
        steps: args.steps,
        mode: match args.mode {
            ModeChoice::Exact => GradientMode::ExactGradient,
            ModeChoice::Reinforce => GradientMode::Reinforce,
        },
        batch_size: args.batch_size,
        ..TrainConfig::default()
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Comparison {
    pub linf_policy_gap: f64,
    pub objective_gap: f64,
    pub trained_maxent_objective: f64,
    pub optimal_maxent_objective: f64,
    pub final_kl: f64,
}

pub fn run_rl_train(args: &RlTrainArgs) -> Result<Comparison> {
    let mdp = load_mdp(&args.model)?;
    let cfg = KlConfig::new(args.rho, args.horizon_arrivals)?;
    let train = train_config(args);
    let out = &args.run.out;
    ensure_dir(out)?;
    let mut rng = stream_rng(args.run.seed, 0);
    let soft = soft_value_iteration(&mdp, cfg.horizon)?;
    let optimal = soft.optimal_objective(&mdp);
    let n = cfg.horizon;

    let comparison = match args.policy_class {
        PolicyClassChoice::Stationary => {
            let trained = match train_policy(&mdp, &cfg, &train, &mut rng) {
                Ok(t) => t,
                Err(RlError::DivergenceDetected { step, last_good }) => {
                    write_stationary(out, &last_good)?;
                    bail!("training diverged at step {step}; last good policy written to policy.json");
                }
                Err(e) => return Err(e.into()),
            };
            write_log(&out.join("training_log.csv"), &trained.log)?;
            write_stationary(out, &trained.policy)?;
            // a stationary policy is compared with the first-step optimum
            let first: Vec<Vec<f64>> = (0..mdp.state_count).map(|s| soft.optimal_policy.probs(0, s)).collect();
            let value = maxent_objective(&mdp, &trained.policy, n)?;
            Comparison {
                linf_policy_gap: policy_gap(&trained.policy.probabilities(), &first),
                objective_gap: optimal - value,
                trained_maxent_objective: value,
                optimal_maxent_objective: optimal,
                final_kl: kl_closed_form(&mdp, &trained.policy, &cfg)?,
            }
        }
        PolicyClassChoice::TimeVarying => {
            if train.mode != GradientMode::ExactGradient {
                bail!("the time-varying policy class supports --mode exact only");
            }
            let trained = train_time_varying_policy(&mdp, &cfg, &train)?;
            write_log(&out.join("training_log.csv"), &trained.log)?;
            let probs: Vec<Vec<Vec<f64>>> = (0..n)
                .map(|k| (0..mdp.state_count).map(|s| trained.policy.probs(k, s)).collect())
                .collect();
            write_json(
                &out.join("policy.json"),
                &PolicyOut {
                    policy_class: "time_varying",
                    logits: &trained.policy.logits,
                    probabilities: &probs,
                },
            )?;
            let gap = (0..n)
                .map(|k| {
                    let opt: Vec<Vec<f64>> = (0..mdp.state_count).map(|s| soft.optimal_policy.probs(k, s)).collect();
                    policy_gap(&probs[k], &opt)
                })
                .fold(0.0, f64::max);
            let value = maxent_objective(&mdp, &trained.policy, n)?;
            Comparison {
                linf_policy_gap: gap,
                objective_gap: optimal - value,
                trained_maxent_objective: value,
                optimal_maxent_objective: optimal,
                final_kl: kl_closed_form(&mdp, &trained.policy, &cfg)?,
            }
        }
    };

    let mut w = csv_writer(&out.join("comparison.csv"))?;
    w.serialize(comparison)?;
    w.flush()?;

    if !args.rho_sweep.is_empty() {
        let reference_cfg = TrainConfig {
            steps: REFERENCE_STEPS,
            ..train
        };
        let reference = maxent_stationary_optimum(&mdp, n, &reference_cfg)?;
        let mut w = csv_writer(&out.join("rho_sweep.csv"))?;
        w.write_record(["rho", "linf_gap_to_maxent_optimum", "kl"])?;
        for &rho in &args.rho_sweep {
            let sweep_cfg = KlConfig::new(rho, n)?;
            let trained = train_policy(&mdp, &sweep_cfg, &reference_cfg, &mut rng)?;
            let gap = policy_gap(&trained.policy.probabilities(), &reference.probabilities());
            let kl = kl_closed_form(&mdp, &trained.policy, &sweep_cfg)?;
            w.write_record([rho.to_string(), gap.to_string(), kl.to_string()])?;
        }
        w.flush()?;
    }
    Ok(comparison)
}

fn write_stationary(out: &std::path::Path, p: &Policy) -> Result<()> {
    write_json(
        &out.join("policy.json"),
        &PolicyOut {
            policy_class: "stationary",
            logits: &p.logits,
            probabilities: p.probabilities(),
        },
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    pub rho: f64,
    pub horizon: usize,
    pub seed: u64,
    pub kl_closed_form: f64,
    pub kl_monte_carlo: McEstimate,
    pub maxent_objective: f64,
    pub optimal_maxent_objective: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decomposition: Option<KlDecomposition>,
}

fn log_ratios<P: PolicySchedule + Sync>(
    mdp: &TabularMdp,
    policy: &P,
    cfg: &KlConfig,
    samples: usize,
    threads: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let chunks = samples.div_ceil(MC_CHUNK);
    let parts = run_jobs(threads, chunks, |c| {
        let len = MC_CHUNK.min(samples - c as usize * MC_CHUNK);
        let mut rng = stream_rng(seed, stream_id(1, c));
        (0..len)
            .map(|_| {
                let t = sample_true_trajectory(mdp, policy, cfg, &mut rng);
                Ok(true_log_density(mdp, policy, cfg, &t)? - model_log_density(mdp, &t)?)
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    Ok(parts.concat())
}

pub fn run_rl_eval(args: &RlEvalArgs) -> Result<Evaluation> {
    let mdp = load_mdp(&args.model)?;
    let cfg = KlConfig::new(args.rho, args.horizon_arrivals)?;
    if args.samples < 2 {
        bail!("--samples must be at least 2");
    }
    let policy: PolicyFile = read_json(&args.policy)?;
    let (seed, threads) = (args.run.seed, args.run.streams);
    let soft = soft_value_iteration(&mdp, cfg.horizon)?;
    let (kl, ratios, value, decomposition) = match &policy {
        PolicyFile::Stationary { logits } => {
            let p = Policy { logits: logits.clone() };
            (
                kl_closed_form(&mdp, &p, &cfg)?,
                log_ratios(&mdp, &p, &cfg, args.samples, threads, seed)?,
                maxent_objective(&mdp, &p, cfg.horizon)?,
                Some(kl_decomposition(&mdp, &p, &cfg)?),
            )
        }
        PolicyFile::TimeVarying { logits } => {
            let p = TimeVaryingPolicy { logits: logits.clone() };
            (
                kl_closed_form(&mdp, &p, &cfg)?,
                log_ratios(&mdp, &p, &cfg, args.samples, threads, seed)?,
                maxent_objective(&mdp, &p, cfg.horizon)?,
                Some(kl_decomposition(&mdp, &p, &cfg)?),
            )
        }
    };
    let (estimate, stderr) = mean_stderr(&ratios);
    let eval = Evaluation {
        rho: args.rho,
        horizon: cfg.horizon,
        seed,
        kl_closed_form: kl,
        kl_monte_carlo: McEstimate {
            estimate,
            stderr,
            samples: ratios.len(),
        },
        maxent_objective: value,
        optimal_maxent_objective: soft.optimal_objective(&mdp),
        decomposition,
    };
    ensure_dir(&args.run.out)?;
    write_json(&args.run.out.join("eval.json"), &eval)?;
    Ok(eval)
}
