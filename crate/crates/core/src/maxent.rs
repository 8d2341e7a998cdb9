//! Reinforcement learning as relative-entropy minimization between a
//! policy-driven trajectory law `q` and a reward-driven model law `p`.
//!
//! Under `q`, waits are `Exp(ρ)`, actions follow `π_θ(a|s)` and states follow
//! the environment kernel. Under `p`, action `a` in state `s` arrives at rate
//! `e^{r(a,s)}` and states follow the same kernel. All expectations marked
//! exact are computed by forward recursion on the state marginals.

use rand::Rng;
use rand_distr::{Distribution, Exp, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adp::sample_index;
use crate::stats::mean_stderr;

const NORMALIZATION_TOLERANCE: f64 = 1e-12;
/// Consecutive objective increases that abort training.
pub const DIVERGENCE_PATIENCE: usize = 50;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RlError {
    #[error("invalid mdp: {0}")]
    InvalidMdp(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("trajectory has zero probability ({0})")]
    ZeroProbabilityEvent(String),
    #[error("objective increased for {DIVERGENCE_PATIENCE} consecutive steps ending at step {step}")]
    DivergenceDetected { step: usize, last_good: Box<Policy> },
}

/// Finite-horizon tabular environment. `transition[s][a][s']` is
/// `q(s'|a, s)` and `reward[s][a]` is `r(a, s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularMdp {
    #[serde(rename = "S")]
    pub state_count: usize,
    #[serde(rename = "A")]
    pub action_count: usize,
    pub initial: Vec<f64>,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<f64>>,
}

fn check_pmf(p: &[f64], len: usize, what: &str) -> Result<(), RlError> {
    if p.len() != len {
        return Err(RlError::InvalidMdp(format!(
            "{what} has {} entries, expected {len}",
            p.len()
        )));
    }
    if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(RlError::InvalidMdp(format!(
            "{what} has a negative or non-finite entry"
        )));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(RlError::InvalidMdp(format!("{what} sums to {s}")));
    }
    Ok(())
}

fn dirichlet_ones<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|v| v / total).collect();
    // push the rounding residue onto the largest entry
    let residue = 1.0 - p.iter().sum::<f64>();
    let imax = (0..k).max_by(|&i, &j| p[i].total_cmp(&p[j])).unwrap_or(0);
    p[imax] += residue;
    p
}

impl TabularMdp {
    pub fn validate(&self) -> Result<(), RlError> {
        let (s, a) = (self.state_count, self.action_count);
        if s == 0 || a == 0 {
            return Err(RlError::InvalidMdp("need at least one state and one action".into()));
        }
        check_pmf(&self.initial, s, "initial")?;
        if self.transition.len() != s || self.reward.len() != s {
            return Err(RlError::InvalidMdp(
                "transition and reward need one entry per state".into(),
            ));
        }
        for (x, row) in self.transition.iter().enumerate() {
            if row.len() != a {
                return Err(RlError::InvalidMdp(format!("transition[{x}] needs {a} actions")));
            }
            for (k, pmf) in row.iter().enumerate() {
                check_pmf(pmf, s, &format!("transition[{x}][{k}]"))?;
            }
        }
        for (x, row) in self.reward.iter().enumerate() {
            if row.len() != a || row.iter().any(|r| !r.is_finite()) {
                return Err(RlError::InvalidMdp(format!("reward[{x}] must hold {a} finite values")));
            }
        }
        Ok(())
    }

    /// Single-state environment; every action returns to the state.
    pub fn bandit(rewards: Vec<f64>) -> Result<Self, RlError> {
        let a = rewards.len();
        let mdp = TabularMdp {
            state_count: 1,
            action_count: a,
            initial: vec![1.0],
            transition: vec![vec![vec![1.0]; a]],
            reward: vec![rewards],
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Flat Dirichlet initial and transition pmfs, standard normal rewards.
    pub fn random<R: Rng + ?Sized>(state_count: usize, action_count: usize, rng: &mut R) -> Self {
        let initial = dirichlet_ones(state_count, rng);
        let transition = (0..state_count)
            .map(|_| (0..action_count).map(|_| dirichlet_ones(state_count, rng)).collect())
            .collect();
        let reward = (0..state_count)
            .map(|_| (0..action_count).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        TabularMdp {
            state_count,
            action_count,
            initial,
            transition,
            reward,
        }
    }

    /// Model arrival rate `λ(s) = Σ_a e^{r(a,s)}`.
    pub fn model_rate(&self, s: usize) -> f64 {
        self.reward[s].iter().map(|r| r.exp()).sum()
    }
}

/// `softmax(row)` and `log softmax(row)`.
fn softmax(row: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let logp: Vec<f64> = row.iter().map(|v| v - lse).collect();
    (logp.iter().map(|l| l.exp()).collect(), logp)
}

/// Stationary softmax policy `π_θ(a|s) ∝ e^{θ[s][a]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub logits: Vec<Vec<f64>>,
}

impl Policy {
    pub fn uniform(state_count: usize, action_count: usize) -> Self {
        Policy {
            logits: vec![vec![0.0; action_count]; state_count],
        }
    }

    pub fn random<R: Rng + ?Sized>(state_count: usize, action_count: usize, scale: f64, rng: &mut R) -> Self {
        Policy {
            logits: (0..state_count)
                .map(|_| {
                    (0..action_count)
                        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                        .collect()
                })
                .collect(),
        }
    }

    /// Logits `ln p` of a strictly positive probability table.
    pub fn from_probabilities(probs: &[Vec<f64>]) -> Result<Self, RlError> {
        if probs.iter().flatten().any(|p| !(*p > 0.0)) {
            return Err(RlError::InvalidPolicy("probabilities must be strictly positive".into()));
        }
        Ok(Policy {
            logits: probs.iter().map(|row| row.iter().map(|p| p.ln()).collect()).collect(),
        })
    }

    pub fn probs(&self, s: usize) -> Vec<f64> {
        softmax(&self.logits[s]).0
    }

    pub fn probabilities(&self) -> Vec<Vec<f64>> {
        (0..self.logits.len()).map(|s| self.probs(s)).collect()
    }

    fn check(&self, mdp: &TabularMdp) -> Result<(), RlError> {
        if self.logits.len() != mdp.state_count || self.logits.iter().any(|r| r.len() != mdp.action_count) {
            return Err(RlError::InvalidPolicy(format!(
                "logits must be {}x{}",
                mdp.state_count, mdp.action_count
            )));
        }
        if self.logits.iter().flatten().any(|v| !v.is_finite()) {
            return Err(RlError::InvalidPolicy("non-finite logit".into()));
        }
        Ok(())
    }
}

/// Step-indexed softmax policy; `logits[n]` drives the action at step `n+1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeVaryingPolicy {
    pub logits: Vec<Vec<Vec<f64>>>,
}

impl TimeVaryingPolicy {
    pub fn constant(policy: &Policy, horizon: usize) -> Self {
        TimeVaryingPolicy {
            logits: vec![policy.logits.clone(); horizon],
        }
    }

    pub fn probs(&self, n: usize, s: usize) -> Vec<f64> {
        softmax(&self.logits[n][s]).0
    }
}

/// Per-step action distributions of a policy over a horizon.
pub trait PolicySchedule {
    /// `(π_n(·|s), ln π_n(·|s))` for the action at step `n+1`.
    fn step(&self, n: usize, s: usize) -> (Vec<f64>, Vec<f64>);
    fn check(&self, mdp: &TabularMdp, horizon: usize) -> Result<(), RlError>;
}

impl PolicySchedule for Policy {
    fn step(&self, _n: usize, s: usize) -> (Vec<f64>, Vec<f64>) {
        softmax(&self.logits[s])
    }

    fn check(&self, mdp: &TabularMdp, _horizon: usize) -> Result<(), RlError> {
        Policy::check(self, mdp)
    }
}

impl PolicySchedule for TimeVaryingPolicy {
    fn step(&self, n: usize, s: usize) -> (Vec<f64>, Vec<f64>) {
        softmax(&self.logits[n][s])
    }

    fn check(&self, mdp: &TabularMdp, horizon: usize) -> Result<(), RlError> {
        if self.logits.len() < horizon {
            return Err(RlError::InvalidPolicy(format!(
                "{} steps of logits for horizon {horizon}",
                self.logits.len()
            )));
        }
        self.logits
            .iter()
            .try_for_each(|l| Policy { logits: l.clone() }.check(mdp))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlConfig {
    pub rho: f64,
    pub horizon: usize,
}

impl KlConfig {
    pub fn new(rho: f64, horizon: usize) -> Result<Self, RlError> {
        let cfg = KlConfig { rho, horizon };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RlError> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(RlError::InvalidConfig(format!(
                "rho must be positive, got {}",
                self.rho
            )));
        }
        if self.horizon == 0 {
            return Err(RlError::InvalidConfig("horizon must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RlStep {
    pub wait: f64,
    pub action: usize,
    pub state: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlTrajectory {
    pub initial_state: usize,
    pub steps: Vec<RlStep>,
}

impl RlTrajectory {
    fn validate(&self, mdp: &TabularMdp) -> Result<(), RlError> {
        let bad = |m: String| Err(RlError::InvalidTrajectory(m));
        if self.initial_state >= mdp.state_count {
            return bad(format!("initial state {}", self.initial_state));
        }
        for (n, st) in self.steps.iter().enumerate() {
            if !(st.wait > 0.0 && st.wait.is_finite()) {
                return bad(format!("wait {} at step {}", st.wait, n + 1));
            }
            if st.action >= mdp.action_count || st.state >= mdp.state_count {
                return bad(format!("index out of range at step {}", n + 1));
            }
        }
        Ok(())
    }

    /// `(s_{n-1}, a_n, s_n, w_n)` for each step.
    fn transitions(&self) -> impl Iterator<Item = (usize, usize, usize, f64)> + '_ {
        let prev = std::iter::once(self.initial_state).chain(self.steps.iter().map(|s| s.state));
        prev.zip(&self.steps).map(|(s, st)| (s, st.action, st.state, st.wait))
    }
}

fn sample_categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    sample_index(p, rng).expect("validated pmf has positive mass")
}

/// Draws from `q`: `s_0 ~ q(S_0)`, then `w ~ Exp(ρ)`, `a ~ π`, `s' ~ q(·|a,s)`.
pub fn sample_true_trajectory<P: PolicySchedule + ?Sized, R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &P,
    cfg: &KlConfig,
    rng: &mut R,
) -> RlTrajectory {
    let wait = Exp::new(cfg.rho).expect("validated rho");
    let s0 = sample_categorical(&mdp.initial, rng);
    let mut s = s0;
    let steps = (0..cfg.horizon)
        .map(|n| {
            let w = wait.sample(rng);
            let a = sample_categorical(&policy.step(n, s).0, rng);
            s = sample_categorical(&mdp.transition[s][a], rng);
            RlStep {
                wait: w,
                action: a,
                state: s,
            }
        })
        .collect();
    RlTrajectory {
        initial_state: s0,
        steps,
    }
}

/// Draws from `p`: `w ~ Exp(λ(s))`, `a ∝ e^{r(a,s)}`, `s' ~ q(·|a,s)`.
pub fn sample_model_trajectory<R: Rng + ?Sized>(mdp: &TabularMdp, horizon: usize, rng: &mut R) -> RlTrajectory {
    let s0 = sample_categorical(&mdp.initial, rng);
    let mut s = s0;
    let steps = (0..horizon)
        .map(|_| {
            let w = Exp::new(mdp.model_rate(s)).expect("positive rate").sample(rng);
            let (p, _) = softmax(&mdp.reward[s]);
            let a = sample_categorical(&p, rng);
            s = sample_categorical(&mdp.transition[s][a], rng);
            RlStep {
                wait: w,
                action: a,
                state: s,
            }
        })
        .collect();
    RlTrajectory {
        initial_state: s0,
        steps,
    }
}

fn ln_checked(p: f64, what: impl FnOnce() -> String) -> Result<f64, RlError> {
    if p > 0.0 {
        Ok(p.ln())
    } else {
        Err(RlError::ZeroProbabilityEvent(what()))
    }
}

fn environment_log_terms(mdp: &TabularMdp, traj: &RlTrajectory) -> Result<f64, RlError> {
    let mut total = ln_checked(mdp.initial[traj.initial_state], || {
        format!("initial state {}", traj.initial_state)
    })?;
    for (s, a, s2, _) in traj.transitions() {
        total += ln_checked(mdp.transition[s][a][s2], || format!("transition {s} -{a}-> {s2}"))?;
    }
    Ok(total)
}

/// `ln q` of a trajectory, as a density in the waits.
pub fn true_log_density<P: PolicySchedule + ?Sized>(
    mdp: &TabularMdp,
    policy: &P,
    cfg: &KlConfig,
    traj: &RlTrajectory,
) -> Result<f64, RlError> {
    traj.validate(mdp)?;
    let mut total = environment_log_terms(mdp, traj)?;
    for (n, (s, a, _, w)) in traj.transitions().enumerate() {
        total += -cfg.rho * w + cfg.rho.ln() + policy.step(n, s).1[a];
    }
    Ok(total)
}

/// `ln p` of a trajectory, as a density in the waits.
pub fn model_log_density(mdp: &TabularMdp, traj: &RlTrajectory) -> Result<f64, RlError> {
    traj.validate(mdp)?;
    let mut total = environment_log_terms(mdp, traj)?;
    for (s, a, _, w) in traj.transitions() {
        total += -mdp.model_rate(s) * w + mdp.reward[s][a];
    }
    Ok(total)
}

/// State marginals `d_0 .. d_{N-1}` of `S_0 .. S_{N-1}` under `q`.
fn forward_marginals<P: PolicySchedule + ?Sized>(mdp: &TabularMdp, policy: &P, horizon: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(horizon);
    let mut d = mdp.initial.clone();
    for n in 0..horizon {
        let mut next = vec![0.0; mdp.state_count];
        for (s, &ds) in d.iter().enumerate() {
            if ds == 0.0 {
                continue;
            }
            let (pi, _) = policy.step(n, s);
            for (a, &pa) in pi.iter().enumerate() {
                for (s2, &q) in mdp.transition[s][a].iter().enumerate() {
                    next[s2] += ds * pa * q;
                }
            }
        }
        out.push(std::mem::replace(&mut d, next));
    }
    out
}

/// Objective `J = Σ_n Σ_s d_n(s) [Σ_a π(η ln π + c(s,a)) + b(s)]` with its
/// exact gradient with respect to each step's logits.
struct Objective<'a> {
    eta: f64,
    c: &'a dyn Fn(usize, usize) -> f64,
    b: &'a dyn Fn(usize) -> f64,
}

struct Evaluated {
    value: f64,
    /// `∂J/∂θ_n[s][a]` per step.
    grads: Vec<Vec<Vec<f64>>>,
}

fn evaluate<P: PolicySchedule + ?Sized>(mdp: &TabularMdp, policy: &P, horizon: usize, obj: &Objective) -> Evaluated {
    let d = forward_marginals(mdp, policy, horizon);
    let (ns, na) = (mdp.state_count, mdp.action_count);
    let mut v_next = vec![0.0; ns];
    let mut grads = vec![vec![vec![0.0; na]; ns]; horizon];
    for n in (0..horizon).rev() {
        let mut v = vec![0.0; ns];
        for s in 0..ns {
            let (pi, logpi) = policy.step(n, s);
            let g: Vec<f64> = (0..na)
                .map(|a| {
                    let cont: f64 = mdp.transition[s][a].iter().zip(&v_next).map(|(q, vn)| q * vn).sum();
                    obj.eta * logpi[a] + (obj.c)(s, a) + cont
                })
                .collect();
            let mean_g: f64 = pi.iter().zip(&g).map(|(p, gv)| p * gv).sum();
            v[s] = mean_g + (obj.b)(s);
            for a in 0..na {
                grads[n][s][a] = d[n][s] * pi[a] * (g[a] - mean_g);
            }
        }
        v_next = v;
    }
    let value = mdp.initial.iter().zip(&v_next).map(|(p, v)| p * v).sum();
    Evaluated { value, grads }
}

/// Exact `I(q‖p)` over `N` arrivals.
pub fn kl_closed_form<P: PolicySchedule + ?Sized>(
    mdp: &TabularMdp,
    policy: &P,
    cfg: &KlConfig,
) -> Result<f64, RlError> {
    Ok(kl_with_gradient(mdp, policy, cfg)?.0)
}

/// Per-step logit gradients, indexed `[n][s][a]`.
type StepGradients = Vec<Vec<Vec<f64>>>;

fn kl_with_gradient<P: PolicySchedule + ?Sized>(
    mdp: &TabularMdp,
    policy: &P,
    cfg: &KlConfig,
) -> Result<(f64, StepGradients), RlError> {
    mdp.validate()?;
    cfg.validate()?;
    policy.check(mdp, cfg.horizon)?;
    let rho = cfg.rho;
    let c = |s: usize, a: usize| -mdp.reward[s][a];
    let b = |s: usize| mdp.model_rate(s) / rho - 1.0 + rho.ln();
    let e = evaluate(mdp, policy, cfg.horizon, &Objective { eta: 1.0, c: &c, b: &b });
    Ok((e.value, e.grads))
}

/// The two pieces of the exact KL: `Σ_n E[ln π − r]` and
/// `Σ_n (E[λ(S_{n-1})]/ρ − 1 + ln ρ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KlDecomposition {
    pub policy_term: f64,
    pub rate_term: f64,
    /// `Σ_n E[λ(S_{n-1})]`.
    pub expected_model_rate: f64,
    pub total: f64,
}

pub fn kl_decomposition<P: PolicySchedule + ?Sized>(
    mdp: &TabularMdp,
    policy: &P,
    cfg: &KlConfig,
) -> Result<KlDecomposition, RlError> {
    mdp.validate()?;
    cfg.validate()?;
    policy.check(mdp, cfg.horizon)?;
    let d = forward_marginals(mdp, policy, cfg.horizon);
    let mut policy_term = 0.0;
    let mut expected_model_rate = 0.0;
    for (n, dn) in d.iter().enumerate() {
        for (s, &ds) in dn.iter().enumerate() {
            let (pi, logpi) = policy.step(n, s);
            let inner: f64 = (0..mdp.action_count)
                .map(|a| pi[a] * (logpi[a] - mdp.reward[s][a]))
                .sum();
            policy_term += ds * inner;
            expected_model_rate += ds * mdp.model_rate(s);
        }
    }
    let n = cfg.horizon as f64;
    let rate_term = expected_model_rate / cfg.rho - n + n * cfg.rho.ln();
    Ok(KlDecomposition {
        policy_term,
        rate_term,
        expected_model_rate,
        total: policy_term + rate_term,
    })
}

/// `θ`-gradient of the exact KL for a stationary policy.
pub fn kl_gradient(mdp: &TabularMdp, policy: &Policy, cfg: &KlConfig) -> Result<Vec<Vec<f64>>, RlError> {
    Ok(sum_steps(kl_with_gradient(mdp, policy, cfg)?.1))
}

/// Per-step logit gradients of the exact KL for a time-varying policy.
pub fn kl_gradient_time_varying(
    mdp: &TabularMdp,
    policy: &TimeVaryingPolicy,
    cfg: &KlConfig,
) -> Result<Vec<Vec<Vec<f64>>>, RlError> {
    Ok(kl_with_gradient(mdp, policy, cfg)?.1)
}

fn sum_steps(grads: Vec<Vec<Vec<f64>>>) -> Vec<Vec<f64>> {
    let mut it = grads.into_iter();
    let mut acc = it.next().unwrap_or_default();
    for g in it {
        for (ra, rg) in acc.iter_mut().zip(g) {
            for (x, y) in ra.iter_mut().zip(rg) {
                *x += y;
            }
        }
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub samples: usize,
}

/// Sample mean of `ln q − ln p` over trajectories drawn from `q`.
pub fn kl_monte_carlo<P: PolicySchedule + ?Sized, R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &P,
    cfg: &KlConfig,
    n_samples: usize,
    rng: &mut R,
) -> Result<McEstimate, RlError> {
    if n_samples < 2 {
        return Err(RlError::InvalidConfig("need at least two samples".into()));
    }
    mdp.validate()?;
    cfg.validate()?;
    policy.check(mdp, cfg.horizon)?;
    let ratios = (0..n_samples)
        .map(|_| {
            let t = sample_true_trajectory(mdp, policy, cfg, rng);
            Ok(true_log_density(mdp, policy, cfg, &t)? - model_log_density(mdp, &t)?)
        })
        .collect::<Result<Vec<f64>, RlError>>()?;
    let (estimate, stderr) = mean_stderr(&ratios);
    Ok(McEstimate {
        estimate,
        stderr,
        samples: n_samples,
    })
}

/// Exact `Σ_n E_q[r(A_n, S_{n-1})] + E_q[H(π(·|S_{n-1}))]`.
pub fn maxent_objective<P: PolicySchedule + ?Sized>(
    mdp: &TabularMdp,
    policy: &P,
    horizon: usize,
) -> Result<f64, RlError> {
    Ok(maxent_with_gradient(mdp, policy, horizon)?.0)
}

fn maxent_with_gradient<P: PolicySchedule + ?Sized>(
    mdp: &TabularMdp,
    policy: &P,
    horizon: usize,
) -> Result<(f64, StepGradients), RlError> {
    mdp.validate()?;
    policy.check(mdp, horizon)?;
    let c = |s: usize, a: usize| mdp.reward[s][a];
    let b = |_: usize| 0.0;
    let e = evaluate(
        mdp,
        policy,
        horizon,
        &Objective {
            eta: -1.0,
            c: &c,
            b: &b,
        },
    );
    Ok((e.value, e.grads))
}

/// `θ`-gradient of the max-ent objective for a stationary policy.
pub fn maxent_gradient(mdp: &TabularMdp, policy: &Policy, horizon: usize) -> Result<Vec<Vec<f64>>, RlError> {
    Ok(sum_steps(maxent_with_gradient(mdp, policy, horizon)?.1))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SoftValues {
    /// `Q_n(s, a)` for `n = 0..N`.
    pub soft_q: Vec<Vec<Vec<f64>>>,
    /// `V_n(s)` for `n = 0..N`; `V_N ≡ 0` is omitted.
    pub soft_v: Vec<Vec<f64>>,
    pub optimal_policy: TimeVaryingPolicy,
}

impl SoftValues {
    /// `Σ_s q(s) V_0(s)`, the optimal max-ent objective.
    pub fn optimal_objective(&self, mdp: &TabularMdp) -> f64 {
        mdp.initial.iter().zip(&self.soft_v[0]).map(|(p, v)| p * v).sum()
    }
}

/// Backward log-sum-exp recursion for the finite-horizon max-ent optimum.
pub fn soft_value_iteration(mdp: &TabularMdp, horizon: usize) -> Result<SoftValues, RlError> {
    mdp.validate()?;
    if horizon == 0 {
        return Err(RlError::InvalidConfig("horizon must be at least 1".into()));
    }
    let (ns, na) = (mdp.state_count, mdp.action_count);
    let mut soft_q = vec![vec![vec![0.0; na]; ns]; horizon];
    let mut soft_v = vec![vec![0.0; ns]; horizon];
    let mut v_next = vec![0.0; ns];
    for n in (0..horizon).rev() {
        for s in 0..ns {
            let row: Vec<f64> = (0..na)
                .map(|a| {
                    mdp.reward[s][a]
                        + mdp.transition[s][a]
                            .iter()
                            .zip(&v_next)
                            .map(|(q, v)| q * v)
                            .sum::<f64>()
                })
                .collect();
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            soft_v[n][s] = max + row.iter().map(|q| (q - max).exp()).sum::<f64>().ln();
            soft_q[n][s] = row;
        }
        v_next = soft_v[n].clone();
    }
    let optimal_policy = TimeVaryingPolicy { logits: soft_q.clone() };
    Ok(SoftValues {
        soft_q,
        soft_v,
        optimal_policy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    ExactGradient,
    Reinforce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyClass {
    Stationary,
    TimeVarying,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub mode: GradientMode,
    /// Trajectories per score-function estimate.
    pub batch_size: usize,
    /// Stop once the gradient sup-norm falls below this.
    pub tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1.0,
            steps: 2_000,
            mode: GradientMode::ExactGradient,
            batch_size: 256,
            tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainLogEntry {
    pub step: usize,
    pub kl: f64,
    pub maxent_objective: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trained<P> {
    pub policy: P,
    pub log: Vec<TrainLogEntry>,
}

fn sup_norm<'a>(xs: impl IntoIterator<Item = &'a f64>) -> f64 {
    xs.into_iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Tracks consecutive increases of the objective.
struct DivergenceGuard {
    best: f64,
    last: f64,
    rising: usize,
}

impl DivergenceGuard {
    fn new() -> Self {
        DivergenceGuard {
            best: f64::INFINITY,
            last: f64::INFINITY,
            rising: 0,
        }
    }

    /// Returns true once the patience is exhausted.
    fn observe(&mut self, value: f64) -> bool {
        if value > self.last || !value.is_finite() {
            self.rising += 1;
        } else {
            self.rising = 0;
        }
        self.last = value;
        self.best = self.best.min(value);
        self.rising >= DIVERGENCE_PATIENCE
    }
}

/// Score-function estimate of the stationary KL gradient with a batch-mean
/// baseline.
fn reinforce_gradient<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &Policy,
    cfg: &KlConfig,
    batch: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>, RlError> {
    let (ns, na) = (mdp.state_count, mdp.action_count);
    let mut samples = Vec::with_capacity(batch);
    for _ in 0..batch {
        let t = sample_true_trajectory(mdp, policy, cfg, rng);
        let f = true_log_density(mdp, policy, cfg, &t)? - model_log_density(mdp, &t)?;
        let mut score = vec![vec![0.0; na]; ns];
        for (s, a, _, _) in t.transitions() {
            let pi = policy.probs(s);
            for (b, &pb) in pi.iter().enumerate() {
                score[s][b] += if b == a { 1.0 - pb } else { -pb };
            }
        }
        samples.push((f, score));
    }
    let baseline = samples.iter().map(|(f, _)| f).sum::<f64>() / batch as f64;
    let mut grad = vec![vec![0.0; na]; ns];
    for (f, score) in &samples {
        for s in 0..ns {
            for a in 0..na {
                grad[s][a] += (f - baseline) * score[s][a] / (batch as f64 - 1.0).max(1.0);
            }
        }
    }
    Ok(grad)
}

/// Gradient descent on the exact KL over stationary softmax policies,
/// starting from the uniform policy.
pub fn train_policy<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    cfg: &KlConfig,
    train: &TrainConfig,
    rng: &mut R,
) -> Result<Trained<Policy>, RlError> {
    train_policy_from(mdp, cfg, train, Policy::uniform(mdp.state_count, mdp.action_count), rng)
}

pub fn train_policy_from<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    cfg: &KlConfig,
    train: &TrainConfig,
    start: Policy,
    rng: &mut R,
) -> Result<Trained<Policy>, RlError> {
    check_train(train)?;
    let mut policy = start;
    let mut log = Vec::new();
    let mut guard = DivergenceGuard::new();
    let mut last_good = policy.clone();
    for step in 1..=train.steps {
        let (kl, exact) = kl_with_gradient(mdp, &policy, cfg)?;
        let exact = sum_steps(exact);
        let grad = match train.mode {
            GradientMode::ExactGradient => exact,
            GradientMode::Reinforce => reinforce_gradient(mdp, &policy, cfg, train.batch_size, rng)?,
        };
        let grad_norm = sup_norm(grad.iter().flatten());
        log.push(TrainLogEntry {
            step,
            kl,
            maxent_objective: maxent_objective(mdp, &policy, cfg.horizon)?,
            grad_norm,
        });
        if kl <= guard.best {
            last_good = policy.clone();
        }
        if guard.observe(kl) {
            return Err(RlError::DivergenceDetected {
                step,
                last_good: Box::new(last_good),
            });
        }
        if train.mode == GradientMode::ExactGradient && grad_norm < train.tolerance {
            break;
        }
        for (row, grow) in policy.logits.iter_mut().zip(&grad) {
            for (t, g) in row.iter_mut().zip(grow) {
                *t -= train.learning_rate * g;
            }
        }
    }
    Ok(Trained { policy, log })
}

/// Exact-gradient descent on the KL over step-indexed policies.
pub fn train_time_varying_policy(
    mdp: &TabularMdp,
    cfg: &KlConfig,
    train: &TrainConfig,
) -> Result<Trained<TimeVaryingPolicy>, RlError> {
    check_train(train)?;
    let mut policy = TimeVaryingPolicy::constant(&Policy::uniform(mdp.state_count, mdp.action_count), cfg.horizon);
    let mut log = Vec::new();
    let mut guard = DivergenceGuard::new();
    let mut last_good = policy.logits[0].clone();
    for step in 1..=train.steps {
        let (kl, grads) = kl_with_gradient(mdp, &policy, cfg)?;
        let grad_norm = sup_norm(grads.iter().flatten().flatten());
        log.push(TrainLogEntry {
            step,
            kl,
            maxent_objective: maxent_objective(mdp, &policy, cfg.horizon)?,
            grad_norm,
        });
        if kl <= guard.best {
            last_good = policy.logits[0].clone();
        }
        if guard.observe(kl) {
            return Err(RlError::DivergenceDetected {
                step,
                last_good: Box::new(Policy { logits: last_good }),
            });
        }
        if grad_norm < train.tolerance {
            break;
        }
        for (ln, gn) in policy.logits.iter_mut().zip(&grads) {
            for (row, grow) in ln.iter_mut().zip(gn) {
                for (t, g) in row.iter_mut().zip(grow) {
                    *t -= train.learning_rate * g;
                }
            }
        }
    }
    Ok(Trained { policy, log })
}

/// Gradient ascent on the max-ent objective over stationary policies.
pub fn maxent_stationary_optimum(mdp: &TabularMdp, horizon: usize, train: &TrainConfig) -> Result<Policy, RlError> {
    check_train(train)?;
    let mut policy = Policy::uniform(mdp.state_count, mdp.action_count);
    for _ in 0..train.steps {
        let grad = maxent_gradient(mdp, &policy, horizon)?;
        if sup_norm(grad.iter().flatten()) < train.tolerance {
            break;
        }
        for (row, grow) in policy.logits.iter_mut().zip(&grad) {
            for (t, g) in row.iter_mut().zip(grow) {
                *t += train.learning_rate * g;
            }
        }
    }
    Ok(policy)
}

fn check_train(train: &TrainConfig) -> Result<(), RlError> {
    if train.steps == 0 || !(train.learning_rate > 0.0) || train.batch_size < 2 {
        return Err(RlError::InvalidConfig(
            "steps >= 1, learning_rate > 0 and batch_size >= 2 are required".into(),
        ));
    }
    Ok(())
}

/// `max_{s,a} |π_1(a|s) − π_2(a|s)|`.
pub fn policy_gap(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
