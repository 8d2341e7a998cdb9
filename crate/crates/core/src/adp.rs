//! Action-driven processes: competing action clocks with tempered rates and
//! state transitions triggered at each arrival.
//!
//! A model exposes, for each state `x` and non-trivial action `a`, a wait-time
//! rate `λ_{xa}(w)` and a transition kernel `p_{xay}(w)`, where `w` is the
//! wait since the last non-trivial arrival. Three samplers produce the same
//! law over trajectories:
//!
//! * IAA: one independent clock per action; the earliest clock wins.
//! * AAA: one clock at the total rate `λ_x(w) = Σ_a λ_{xa}(w)^β`, then an
//!   action drawn with probability `λ_{xa}(w)^β / λ_x(w)`.
//! * Uniformized: a homogeneous stream at rate `λ̄ ≥ λ_x(w)`, where each
//!   arrival is a trivial `Id` action with probability `1 − λ_x(w)/λ̄`.
//!
//! Trivial `Id` arrivals keep the state and do not reset the wait clock.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::point_process::{sample_wait, thin_first_arrival, PointProcessError, TemperedSum, WaitOutcome};
use crate::rate::{RateError, RateFunction, Temperature};

/// Tolerance on pmf normalization.
pub const PMF_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdpError {
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error(transparent)]
    PointProcess(#[from] PointProcessError),
    #[error("unknown state {0}")]
    UnknownState(usize),
    #[error("unknown action {0}")]
    UnknownAction(usize),
    #[error("total rate is zero in state {state} at wait {wait}")]
    ZeroTotalRate { state: String, wait: f64 },
    #[error("transition pmf is identically zero")]
    DegeneratePmf,
    #[error("no transition kernel for state {state}, action {action}")]
    MissingTransition { state: usize, action: usize },
    #[error("invalid pmf: {0}")]
    InvalidPmf(String),
    #[error("uniformization rate {lambda_bar} is below the total rate bound {required}")]
    BoundViolation { lambda_bar: f64, required: f64 },
    #[error("all action rates are zero")]
    AllRatesZero,
    #[error("no finite rate majorant: {0}")]
    MajorantUnavailable(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("unsupported horizon: {0}")]
    UnsupportedHorizon(String),
}

/// An action label. Non-trivial actions are dense indices `0..A`; the single
/// trivial action `Id` maps every state to itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ActionId {
    Trivial,
    Action(usize),
}

impl ActionId {
    pub fn is_trivial(self) -> bool {
        matches!(self, ActionId::Trivial)
    }

    pub fn index(self) -> Option<usize> {
        match self {
            ActionId::Trivial => None,
            ActionId::Action(a) => Some(a),
        }
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionId::Trivial => f.write_str("Id"),
            ActionId::Action(a) => write!(f, "{a}"),
        }
    }
}

impl Serialize for ActionId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            ActionId::Trivial => serializer.serialize_str("Id"),
            ActionId::Action(a) => serializer.serialize_u64(*a as u64),
        }
    }
}

/// The dynamics of an action-driven process.
pub trait AdpModel {
    type State: Clone + fmt::Debug;

    /// Number of non-trivial actions.
    fn action_count(&self) -> usize;

    fn action_name(&self, a: usize) -> String {
        format!("a{a}")
    }

    /// Untempered rate of action `a` in state `x`, as a function of the wait.
    fn action_rate(&self, x: &Self::State, a: usize) -> Result<Cow<'_, RateFunction>, AdpError>;

    /// Draws the next state from the tempered transition pmf at `(x, a, w)`.
    fn sample_next_state<R: Rng + ?Sized>(
        &self,
        x: &Self::State,
        a: usize,
        wait: f64,
        beta: Temperature,
        rng: &mut R,
    ) -> Result<Self::State, AdpError>;

    /// Most likely next state under the base pmf, lowest index on ties.
    fn mode_next_state(&self, x: &Self::State, a: usize, wait: f64) -> Result<Self::State, AdpError>;

    /// `sup_x sup_{w∈[0,max_wait]} λ_x^{(β)}(w)` when the state space can be
    /// enumerated; `None` otherwise.
    fn global_rate_bound(&self, _beta: Temperature, _max_wait: f64) -> Result<Option<f64>, AdpError> {
        Ok(None)
    }
}

fn rates_of<'m, M: AdpModel>(model: &'m M, x: &M::State) -> Result<Vec<Cow<'m, RateFunction>>, AdpError> {
    (0..model.action_count()).map(|a| model.action_rate(x, a)).collect()
}

/// `λ_x^{(β)}(w) = Σ_a λ_{xa}(w)^β` over non-trivial actions.
pub fn total_rate<M: AdpModel>(model: &M, x: &M::State, wait: f64, beta: Temperature) -> Result<f64, AdpError> {
    let mut total = 0.0;
    for a in 0..model.action_count() {
        total += model.action_rate(x, a)?.rate_at(wait, beta)?;
    }
    Ok(total)
}

/// `p^{(β)}_{xa}(w) = λ_{xa}(w)^β / λ_x^{(β)}(w)`.
pub fn action_probabilities<M: AdpModel>(
    model: &M,
    x: &M::State,
    wait: f64,
    beta: Temperature,
) -> Result<Vec<f64>, AdpError> {
    let raw = (0..model.action_count())
        .map(|a| Ok(model.action_rate(x, a)?.rate_at(wait, Temperature::ONE)?))
        .collect::<Result<Vec<f64>, AdpError>>()?;
    tempered_weights(&raw, beta).ok_or_else(|| AdpError::ZeroTotalRate {
        state: format!("{x:?}"),
        wait,
    })
}

/// Normalized `r^β` from untempered rates, scaled by the largest rate so
/// the powers cannot overflow or all underflow.
fn tempered_weights(raw: &[f64], beta: Temperature) -> Option<Vec<f64>> {
    let max = raw.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) {
        return None;
    }
    if max.is_infinite() {
        let n_inf = raw.iter().filter(|r| r.is_infinite()).count() as f64;
        return Some(
            raw.iter()
                .map(|r| if r.is_infinite() { 1.0 / n_inf } else { 0.0 })
                .collect(),
        );
    }
    let powered: Vec<f64> = raw.iter().map(|&r| beta.temper(r / max)).collect();
    let total: f64 = powered.iter().sum();
    Some(powered.into_iter().map(|p| p / total).collect())
}

/// `p^β / Σ p^β` for a base pmf. `β = 1` returns the input unchanged.
pub fn temper_pmf(base: &[f64], beta: Temperature) -> Result<Vec<f64>, AdpError> {
    if base.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(AdpError::InvalidPmf(format!("{base:?}")));
    }
    if base.iter().all(|&p| p == 0.0) {
        return Err(AdpError::DegeneratePmf);
    }
    if beta == Temperature::ONE {
        return Ok(base.to_vec());
    }
    // scale by the largest entry so large β cannot underflow every term
    let max = base.iter().copied().fold(0.0, f64::max);
    let powered: Vec<f64> = base.iter().map(|&p| beta.temper(p / max)).collect();
    let total: f64 = powered.iter().sum();
    Ok(powered.into_iter().map(|p| p / total).collect())
}

/// Index drawn from unnormalized nonnegative `weights`.
pub(crate) fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return None;
    }
    let mut u = rng.random::<f64>() * total;
    let mut last_positive = None;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            if u < w {
                return Some(i);
            }
            u -= w;
            last_positive = Some(i);
        }
    }
    last_positive
}

fn argmax_lowest(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Wait-time bucketed or fixed base transition pmf of one `(x, a)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TransitionKernel {
    Fixed(Vec<f64>),
    /// `pmfs[k]` applies for waits in `[edges[k-1], edges[k])`.
    Bucketed {
        edges: Vec<f64>,
        pmfs: Vec<Vec<f64>>,
    },
}

impl TransitionKernel {
    pub fn pmf_at(&self, wait: f64) -> &[f64] {
        match self {
            TransitionKernel::Fixed(p) => p,
            TransitionKernel::Bucketed { edges, pmfs } => &pmfs[edges.partition_point(|&e| e <= wait)],
        }
    }

    fn validate(&self, state_count: usize) -> Result<(), AdpError> {
        let check = |p: &Vec<f64>| -> Result<(), AdpError> {
            if p.len() != state_count {
                return Err(AdpError::InvalidPmf(format!(
                    "pmf has {} entries for {state_count} states",
                    p.len()
                )));
            }
            if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(AdpError::InvalidPmf(format!("{p:?}")));
            }
            let s: f64 = p.iter().sum();
            if (s - 1.0).abs() > PMF_TOLERANCE {
                return Err(AdpError::InvalidPmf(format!("pmf sums to {s}")));
            }
            Ok(())
        };
        match self {
            TransitionKernel::Fixed(p) => check(p),
            TransitionKernel::Bucketed { edges, pmfs } => {
                if pmfs.len() != edges.len() + 1 || edges.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(AdpError::InvalidPmf("bucket edges and pmfs disagree".into()));
                }
                pmfs.iter().try_for_each(check)
            }
        }
    }
}

/// An ADP on states `0..state_count` with explicit rates and stochastic
/// matrices.
#[derive(Debug, Clone)]
pub struct TabularAdp {
    state_count: usize,
    action_names: Vec<String>,
    rates: Vec<RateFunction>,
    transitions: Vec<Option<TransitionKernel>>,
    initial_state: usize,
}

impl TabularAdp {
    /// A model where every rate is zero and no transition is defined yet.
    pub fn new(state_count: usize, action_names: Vec<String>, initial_state: usize) -> Result<Self, AdpError> {
        if state_count == 0 || action_names.is_empty() {
            return Err(AdpError::InvalidModel("need at least one state and one action".into()));
        }
        if initial_state >= state_count {
            return Err(AdpError::UnknownState(initial_state));
        }
        let cells = state_count * action_names.len();
        Ok(TabularAdp {
            state_count,
            action_names,
            rates: vec![RateFunction::zero(); cells],
            transitions: vec![None; cells],
            initial_state,
        })
    }

    /// Counting process on `0..=max_count` driven by one `succ` action. The
    /// last state is absorbing.
    pub fn counting_process(rate: RateFunction, max_count: usize) -> Result<Self, AdpError> {
        let mut m = TabularAdp::new(max_count + 1, vec!["succ".into()], 0)?;
        for x in 0..max_count {
            let mut pmf = vec![0.0; max_count + 1];
            pmf[x + 1] = 1.0;
            m.set_rate(x, 0, rate.clone())?;
            m.set_transition(x, 0, TransitionKernel::Fixed(pmf))?;
        }
        Ok(m)
    }

    fn cell(&self, x: usize, a: usize) -> Result<usize, AdpError> {
        if x >= self.state_count {
            return Err(AdpError::UnknownState(x));
        }
        if a >= self.action_names.len() {
            return Err(AdpError::UnknownAction(a));
        }
        Ok(x * self.action_names.len() + a)
    }

    pub fn set_rate(&mut self, x: usize, a: usize, rate: RateFunction) -> Result<(), AdpError> {
        rate.validate()?;
        let c = self.cell(x, a)?;
        self.rates[c] = rate;
        Ok(())
    }

    pub fn set_transition(&mut self, x: usize, a: usize, kernel: TransitionKernel) -> Result<(), AdpError> {
        kernel.validate(self.state_count)?;
        let c = self.cell(x, a)?;
        self.transitions[c] = Some(kernel);
        Ok(())
    }

    /// Every action that can fire must have a transition kernel.
    pub fn validate(&self) -> Result<(), AdpError> {
        for x in 0..self.state_count {
            for a in 0..self.action_names.len() {
                let c = self.cell(x, a)?;
                if !self.rates[c].is_identically_zero() && self.transitions[c].is_none() {
                    return Err(AdpError::MissingTransition { state: x, action: a });
                }
            }
        }
        Ok(())
    }

    pub fn state_count(&self) -> usize {
        self.state_count
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn action_names(&self) -> &[String] {
        &self.action_names
    }

    pub fn rate(&self, x: usize, a: usize) -> Result<&RateFunction, AdpError> {
        Ok(&self.rates[self.cell(x, a)?])
    }

    pub fn base_transition_pmf(&self, x: usize, a: usize, wait: f64) -> Result<&[f64], AdpError> {
        let c = self.cell(x, a)?;
        self.transitions[c]
            .as_ref()
            .map(|k| k.pmf_at(wait))
            .ok_or(AdpError::MissingTransition { state: x, action: a })
    }

    /// `p^{(β)}_{xay}(w)` for all `y`.
    pub fn tempered_transition_pmf(
        &self,
        x: usize,
        a: usize,
        wait: f64,
        beta: Temperature,
    ) -> Result<Vec<f64>, AdpError> {
        temper_pmf(self.base_transition_pmf(x, a, wait)?, beta)
    }

    /// Whether every rate is constant in the wait.
    pub fn has_constant_rates(&self) -> bool {
        self.rates.iter().all(|r| matches!(r, RateFunction::Constant { .. }))
    }

    pub fn from_spec(spec: &ModelSpec) -> Result<Self, AdpError> {
        let mut m = TabularAdp::new(spec.states, spec.actions.clone(), spec.initial)?;
        let parse_key = |key: &str| -> Result<(usize, usize), AdpError> {
            let (xs, as_) = key
                .split_once(',')
                .ok_or_else(|| AdpError::InvalidModel(format!("key {key:?} is not \"x,a\"")))?;
            let x: usize = xs
                .trim()
                .parse()
                .map_err(|_| AdpError::InvalidModel(format!("bad state in key {key:?}")))?;
            let a_str = as_.trim();
            let a = match a_str.parse::<usize>() {
                Ok(a) => a,
                Err(_) => spec
                    .actions
                    .iter()
                    .position(|n| n == a_str)
                    .ok_or_else(|| AdpError::InvalidModel(format!("unknown action {a_str:?}")))?,
            };
            Ok((x, a))
        };
        for (key, rate) in &spec.rates {
            let (x, a) = parse_key(key)?;
            m.set_rate(x, a, rate.clone())?;
        }
        for (key, kernel) in &spec.transitions {
            let (x, a) = parse_key(key)?;
            m.set_transition(x, a, kernel.clone())?;
        }
        m.validate()?;
        Ok(m)
    }
}

/// JSON model description for [`TabularAdp`]. Keys of `rates` and
/// `transitions` are `"x,a"` with `a` an action index or name; a missing rate
/// means the action is inaccessible in that state.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub states: usize,
    pub actions: Vec<String>,
    #[serde(default)]
    pub rates: BTreeMap<String, RateFunction>,
    #[serde(default)]
    pub transitions: BTreeMap<String, TransitionKernel>,
    #[serde(default)]
    pub initial: usize,
}

impl AdpModel for TabularAdp {
    type State = usize;

    fn action_count(&self) -> usize {
        self.action_names.len()
    }

    fn action_name(&self, a: usize) -> String {
        self.action_names.get(a).cloned().unwrap_or_else(|| format!("a{a}"))
    }

    fn action_rate(&self, x: &usize, a: usize) -> Result<Cow<'_, RateFunction>, AdpError> {
        Ok(Cow::Borrowed(self.rate(*x, a)?))
    }

    fn sample_next_state<R: Rng + ?Sized>(
        &self,
        x: &usize,
        a: usize,
        wait: f64,
        beta: Temperature,
        rng: &mut R,
    ) -> Result<usize, AdpError> {
        let base = self.base_transition_pmf(*x, a, wait)?;
        let pmf = if beta == Temperature::ONE {
            Cow::Borrowed(base)
        } else {
            Cow::Owned(temper_pmf(base, beta)?)
        };
        sample_index(&pmf, rng).ok_or(AdpError::DegeneratePmf)
    }

    fn mode_next_state(&self, x: &usize, a: usize, wait: f64) -> Result<usize, AdpError> {
        argmax_lowest(self.base_transition_pmf(*x, a, wait)?).ok_or(AdpError::DegeneratePmf)
    }

    fn global_rate_bound(&self, beta: Temperature, max_wait: f64) -> Result<Option<f64>, AdpError> {
        let mut bound: f64 = 0.0;
        for x in 0..self.state_count {
            let mut sum = 0.0;
            for a in 0..self.action_names.len() {
                sum += self.rate(x, a)?.majorant(0.0, max_wait, beta)?;
            }
            bound = bound.max(sum);
        }
        Ok(Some(bound))
    }
}

/// One arrival: wait since the previous record, the action, and the state
/// after the transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Step<S> {
    pub wait: f64,
    pub action: usize,
    pub state: S,
}

/// Independent-action-arrivals step: one clock per action, earliest wins.
pub fn sample_iaa_step<M: AdpModel, R: Rng + ?Sized>(
    model: &M,
    x: &M::State,
    beta: Temperature,
    horizon: f64,
    rng: &mut R,
) -> Result<Option<Step<M::State>>, AdpError> {
    let mut best: Option<(f64, usize)> = None;
    for a in 0..model.action_count() {
        let rate = model.action_rate(x, a)?;
        if let WaitOutcome::Arrival(w) = sample_wait(&rate, beta, 0.0, horizon, rng)? {
            // strict comparison: exact ties go to the lower index
            if best.is_none_or(|(bw, _)| w < bw) {
                best = Some((w, a));
            }
        }
    }
    let Some((wait, action)) = best else {
        return Ok(None);
    };
    let state = model.sample_next_state(x, action, wait, beta, rng)?;
    Ok(Some(Step { wait, action, state }))
}

/// Action-after-arrival step: a single clock at the total rate, then the
/// action from the tempered action probabilities at the drawn wait.
pub fn sample_aaa_step<M: AdpModel, R: Rng + ?Sized>(
    model: &M,
    x: &M::State,
    beta: Temperature,
    horizon: f64,
    rng: &mut R,
) -> Result<Option<Step<M::State>>, AdpError> {
    let rates = rates_of(model, x)?;
    if rates.iter().all(|r| r.is_identically_zero()) {
        return Ok(None);
    }
    let refs: Vec<&RateFunction> = rates.iter().map(|r| r.as_ref()).collect();
    let outcome = match RateFunction::tempered_sum(&refs, beta) {
        Some(total) => sample_wait(&total, Temperature::ONE, 0.0, horizon, rng)?,
        None => thin_first_arrival(&TemperedSum { rates: &refs, beta }, 0.0, horizon, rng)?,
    };
    let WaitOutcome::Arrival(wait) = outcome else {
        return Ok(None);
    };
    let raw = refs
        .iter()
        .map(|r| r.rate_at(wait, Temperature::ONE))
        .collect::<Result<Vec<f64>, RateError>>()?;
    let weights = tempered_weights(&raw, beta).ok_or_else(|| AdpError::ZeroTotalRate {
        state: format!("{x:?}"),
        wait,
    })?;
    let action = sample_index(&weights, rng).ok_or_else(|| AdpError::ZeroTotalRate {
        state: format!("{x:?}"),
        wait,
    })?;
    let state = model.sample_next_state(x, action, wait, beta, rng)?;
    Ok(Some(Step { wait, action, state }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    MaxArrivals(usize),
    MaxTime(f64),
}

/// `(n, t_n, w_n, a_n, x_n)` for one arrival; `n` starts at 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Record<S> {
    #[serde(rename = "n")]
    pub index: usize,
    #[serde(rename = "t")]
    pub time: f64,
    #[serde(rename = "w")]
    pub wait: f64,
    #[serde(rename = "a")]
    pub action: ActionId,
    #[serde(rename = "x")]
    pub state: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    pub initial_state: S,
    pub horizon: Horizon,
    pub records: Vec<Record<S>>,
}

impl<S: Clone> Trajectory<S> {
    pub fn new(initial_state: S, horizon: Horizon) -> Self {
        Trajectory {
            initial_state,
            horizon,
            records: Vec::new(),
        }
    }

    fn last_time(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.time)
    }

    /// Appends an arrival; its absolute time is the previous time plus `wait`.
    pub fn push(&mut self, wait: f64, action: ActionId, state: S) {
        let time = self.last_time() + wait;
        let index = self.records.len() + 1;
        self.records.push(Record {
            index,
            time,
            wait,
            action,
            state,
        });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn final_state(&self) -> &S {
        self.records.last().map_or(&self.initial_state, |r| &r.state)
    }

    /// Non-trivial actions in order.
    pub fn actions(&self) -> impl Iterator<Item = usize> + '_ {
        self.records.iter().filter_map(|r| r.action.index())
    }
}

impl<S: Serialize> Trajectory<S> {
    /// One JSON object per record, with the action rendered by `name`.
    pub fn write_jsonl<W: Write>(&self, mut out: W, name: impl Fn(ActionId) -> String) -> io::Result<()> {
        #[derive(Serialize)]
        struct Line<'a, S> {
            n: usize,
            t: f64,
            w: f64,
            a: String,
            x: &'a S,
        }
        for r in &self.records {
            let line = Line {
                n: r.index,
                t: r.time,
                w: r.wait,
                a: name(r.action),
                x: &r.state,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Uniformized sampler on `[0, T]`: `N ~ Pois(λ̄T)` arrival times drawn
/// uniformly and sorted; each is `Id` with probability `1 − λ_x(w)/λ̄`.
pub fn sample_uniformized<M: AdpModel, R: Rng + ?Sized>(
    model: &M,
    lambda_bar: f64,
    beta: Temperature,
    horizon: f64,
    x0: M::State,
    rng: &mut R,
) -> Result<Trajectory<M::State>, AdpError> {
    if !(lambda_bar > 0.0 && lambda_bar.is_finite()) {
        return Err(AdpError::InvalidModel(format!("uniformization rate {lambda_bar}")));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(AdpError::UnsupportedHorizon(format!("time horizon {horizon}")));
    }
    check_uniformization_bound(model, lambda_bar, beta, horizon)?;

    let count = Poisson::new(lambda_bar * horizon)
        .map_err(|e| AdpError::InvalidModel(e.to_string()))?
        .sample(rng) as usize;
    let mut times: Vec<f64> = (0..count).map(|_| rng.random::<f64>() * horizon).collect();
    times.sort_by(f64::total_cmp);

    let mut traj = Trajectory::new(x0.clone(), Horizon::MaxTime(horizon));
    let mut x = x0;
    let mut prev = 0.0;
    let mut clock_start = 0.0;
    let mut weights = vec![0.0; model.action_count()];
    for t in times {
        let wait_clock = t - clock_start;
        for (a, w) in weights.iter_mut().enumerate() {
            *w = model.action_rate(&x, a)?.rate_at(wait_clock, beta)?;
        }
        let total: f64 = weights.iter().sum();
        if total > lambda_bar * (1.0 + PMF_TOLERANCE) {
            return Err(AdpError::BoundViolation {
                lambda_bar,
                required: total,
            });
        }
        let wait = t - prev;
        prev = t;
        let u = rng.random::<f64>() * lambda_bar;
        let action = if u >= total {
            None
        } else {
            let mut rest = u;
            let mut chosen = None;
            for (a, &w) in weights.iter().enumerate() {
                if w > 0.0 {
                    chosen = Some(a);
                    if rest < w {
                        break;
                    }
                    rest -= w;
                }
            }
            chosen
        };
        match action {
            None => traj.push(wait, ActionId::Trivial, x.clone()),
            Some(a) => {
                x = model.sample_next_state(&x, a, wait_clock, beta, rng)?;
                clock_start = t;
                traj.push(wait, ActionId::Action(a), x.clone());
            }
        }
    }
    Ok(traj)
}

/// Eager check that `λ̄` dominates the total rate, via rate majorants.
pub fn check_uniformization_bound<M: AdpModel>(
    model: &M,
    lambda_bar: f64,
    beta: Temperature,
    horizon: f64,
) -> Result<(), AdpError> {
    if let Some(required) = model.global_rate_bound(beta, horizon)? {
        if required > lambda_bar * (1.0 + PMF_TOLERANCE) {
            return Err(AdpError::BoundViolation { lambda_bar, required });
        }
    }
    Ok(())
}

/// Removes `Id` records, folding their waits into the next kept record.
/// Absolute times of kept records are unchanged; a trailing run of `Id`
/// records is dropped.
pub fn strip_trivial<S: Clone>(traj: &Trajectory<S>) -> Trajectory<S> {
    let mut out = Trajectory::new(traj.initial_state.clone(), traj.horizon);
    let mut pending = 0.0;
    for r in &traj.records {
        pending += r.wait;
        if !r.action.is_trivial() {
            out.records.push(Record {
                index: out.records.len() + 1,
                time: r.time,
                wait: pending,
                action: r.action,
                state: r.state.clone(),
            });
            pending = 0.0;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    Iaa,
    Aaa,
    Uniformized { lambda_bar: f64 },
}

/// Chains steps from `x0` until the horizon is reached or no clock rings.
pub fn simulate<M: AdpModel, R: Rng + ?Sized>(
    model: &M,
    sampler: Sampler,
    beta: Temperature,
    horizon: Horizon,
    x0: M::State,
    rng: &mut R,
) -> Result<Trajectory<M::State>, AdpError> {
    if let Sampler::Uniformized { lambda_bar } = sampler {
        return match horizon {
            Horizon::MaxTime(t) => sample_uniformized(model, lambda_bar, beta, t, x0, rng),
            Horizon::MaxArrivals(_) => Err(AdpError::UnsupportedHorizon(
                "uniformization needs a time horizon".into(),
            )),
        };
    }
    let (max_time, max_arrivals) = match horizon {
        Horizon::MaxTime(t) if t > 0.0 && t.is_finite() => (t, usize::MAX),
        Horizon::MaxArrivals(n) => (f64::INFINITY, n),
        Horizon::MaxTime(t) => return Err(AdpError::UnsupportedHorizon(format!("time horizon {t}"))),
    };
    let mut traj = Trajectory::new(x0.clone(), horizon);
    let mut x = x0;
    let mut now = 0.0;
    while traj.len() < max_arrivals {
        let remaining = (max_time - now).max(0.0);
        let step = match sampler {
            Sampler::Iaa => sample_iaa_step(model, &x, beta, remaining, rng)?,
            Sampler::Aaa => sample_aaa_step(model, &x, beta, remaining, rng)?,
            Sampler::Uniformized { .. } => unreachable!(),
        };
        let Some(step) = step else { break };
        traj.push(step.wait, ActionId::Action(step.action), step.state.clone());
        now = traj.last_time();
        x = step.state;
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedChains<S> {
    /// `(t_n, x_n)` starting with `(0, x_0)`.
    pub stepped: Vec<(f64, S)>,
    /// `x_n` starting with `x_0`.
    pub discrete: Vec<S>,
}

pub fn embedded_chains<S: Clone>(traj: &Trajectory<S>) -> EmbeddedChains<S> {
    let stepped: Vec<(f64, S)> = std::iter::once((0.0, traj.initial_state.clone()))
        .chain(traj.records.iter().map(|r| (r.time, r.state.clone())))
        .collect();
    let discrete = stepped.iter().map(|(_, s)| s.clone()).collect();
    EmbeddedChains { stepped, discrete }
}

/// Deterministic `β → ∞` step: the action with the largest rate at the first
/// grid point, then the mode of its base transition pmf.
pub fn zero_temperature_step<M: AdpModel>(
    model: &M,
    x: &M::State,
    wait_grid: &[f64],
) -> Result<(usize, M::State), AdpError> {
    let &w0 = wait_grid
        .first()
        .ok_or_else(|| AdpError::InvalidModel("empty wait grid".into()))?;
    let rates = (0..model.action_count())
        .map(|a| Ok(model.action_rate(x, a)?.rate_at(w0, Temperature::ONE)?))
        .collect::<Result<Vec<f64>, AdpError>>()?;
    let action = argmax_lowest(&rates).ok_or(AdpError::AllRatesZero)?;
    if !(rates[action] > 0.0) {
        return Err(AdpError::AllRatesZero);
    }
    let next = model.mode_next_state(x, action, w0)?;
    Ok((action, next))
}
