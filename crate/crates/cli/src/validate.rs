//! Sampler cross-checks: IAA against AAA step by step, and stripped
//! uniformized trajectories against IAA trajectories.

use std::borrow::Cow;

use adp_core::adp::{
    check_uniformization_bound, sample_aaa_step, sample_iaa_step, sample_uniformized, simulate, strip_trivial,
    total_rate, ActionId, AdpError, AdpModel, Horizon, Sampler, Step, TabularAdp, Trajectory,
};
use adp_core::rate::{RateFunction, Temperature};
use adp_core::rng::{stream_rng, StreamRng};
use adp_core::stats::{chi2_homogeneity, ks_two_sample, ks_two_sample_critical};
use anyhow::{bail, Result};
use rand::Rng;
use serde::Serialize;

use crate::args::{Fault, ValidateArgs};
use crate::config::{RunConfig, Thresholds};
use crate::output::{ensure_dir, run_jobs, stream_id, write_json};
use crate::simulate::load_model;

const STEP_CHUNK: usize = 10_000;
const TRAJECTORIES_PER_CHUNK: usize = 64;
const CHUNKS_PER_WAVE: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestOutcome {
    pub name: String,
    pub statistic: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    pub threshold: f64,
    pub pass: bool,
    pub sample_sizes: [usize; 2],
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub overall_pass: bool,
    pub seed: u64,
    pub beta: f64,
    pub thresholds: Thresholds,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub injected_fault: Option<String>,
    pub tests: Vec<TestOutcome>,
}

impl ValidationReport {
    pub fn failed(&self) -> impl Iterator<Item = &TestOutcome> {
        self.tests.iter().filter(|t| !t.pass)
    }
}

/// Presents the actions of `inner` in reverse order for rate purposes while
/// keeping each drawn index's own transition kernel, so the action pmf is
/// permuted but waits are not.
pub struct SwappedActions<'a, M>(pub &'a M);

impl<M: AdpModel> AdpModel for SwappedActions<'_, M> {
    type State = M::State;

    fn action_count(&self) -> usize {
        self.0.action_count()
    }

    fn action_rate(&self, x: &Self::State, a: usize) -> Result<Cow<'_, RateFunction>, AdpError> {
        self.0.action_rate(x, self.0.action_count() - 1 - a)
    }

    fn sample_next_state<R: Rng + ?Sized>(
        &self,
        x: &Self::State,
        a: usize,
        wait: f64,
        beta: Temperature,
        rng: &mut R,
    ) -> Result<Self::State, AdpError> {
        self.0.sample_next_state(x, a, wait, beta, rng)
    }

    fn mode_next_state(&self, x: &Self::State, a: usize, wait: f64) -> Result<Self::State, AdpError> {
        self.0.mode_next_state(x, a, wait)
    }

    fn global_rate_bound(&self, beta: Temperature, max_wait: f64) -> Result<Option<f64>, AdpError> {
        self.0.global_rate_bound(beta, max_wait)
    }
}

fn ks_test(name: String, a: &[f64], b: &[f64], th: &Thresholds) -> TestOutcome {
    let d = ks_two_sample(a, b);
    let crit = ks_two_sample_critical(a.len(), b.len(), th.ks_critical_scale);
    TestOutcome {
        name,
        statistic: d,
        p_value: None,
        threshold: crit,
        pass: d < crit,
        sample_sizes: [a.len(), b.len()],
    }
}

fn chi2_test(name: String, a: &[u64], b: &[u64], th: &Thresholds) -> TestOutcome {
    let c = chi2_homogeneity(a, b);
    TestOutcome {
        name,
        statistic: c.statistic,
        p_value: Some(c.p_value),
        threshold: th.chi2_p_floor,
        pass: c.p_value > th.chi2_p_floor,
        sample_sizes: [a.iter().sum::<u64>() as usize, b.iter().sum::<u64>() as usize],
    }
}

/// Waits, action counts (last slot = no arrival) and next-state counts of
/// `n` single steps from `x`.
struct StepSample {
    waits: Vec<f64>,
    actions: Vec<u64>,
    next_states: Vec<u64>,
}

fn sample_steps<M, F>(
    model: &M,
    n_states: usize,
    n: usize,
    threads: usize,
    seed: u64,
    tag: u64,
    step: F,
) -> Result<StepSample>
where
    M: AdpModel<State = usize> + Sync,
    F: Fn(&mut StreamRng) -> Result<Option<Step<usize>>, AdpError> + Sync,
{
    let chunks = n.div_ceil(STEP_CHUNK);
    let parts = run_jobs(threads, chunks, |c| {
        let len = STEP_CHUNK.min(n - c as usize * STEP_CHUNK);
        let mut rng = stream_rng(seed, stream_id(tag, c));
        (0..len).map(|_| Ok(step(&mut rng)?)).collect::<Result<Vec<_>>>()
    })?;
    let mut out = StepSample {
        waits: Vec::with_capacity(n),
        actions: vec![0; model.action_count() + 1],
        next_states: vec![0; n_states],
    };
    for s in parts.into_iter().flatten() {
        match s {
            Some(s) => {
                out.waits.push(s.wait);
                out.actions[s.action] += 1;
                out.next_states[s.state] += 1;
            }
            None => {
                out.waits.push(f64::INFINITY);
                *out.actions.last_mut().unwrap() += 1;
            }
        }
    }
    Ok(out)
}

/// Stripped waits and action counts from trajectories on `[0, T]`, drawn in
/// fixed waves until at least `n` arrivals are collected, plus the Id tally
/// against its expected value when uniformized.
struct PathSample {
    waits: Vec<f64>,
    actions: Vec<u64>,
    id_observed: f64,
    id_expected: f64,
    id_variance: f64,
    arrivals: usize,
}

#[allow(clippy::too_many_arguments)]
fn sample_paths<F>(
    model: &TabularAdp,
    beta: Temperature,
    lambda_bar: Option<f64>,
    n: usize,
    threads: usize,
    seed: u64,
    tag: u64,
    draw: F,
) -> Result<PathSample>
where
    F: Fn(&mut StreamRng) -> Result<Trajectory<usize>, AdpError> + Sync,
{
    let mut out = PathSample {
        waits: Vec::with_capacity(n),
        actions: vec![0; model.action_count()],
        id_observed: 0.0,
        id_expected: 0.0,
        id_variance: 0.0,
        arrivals: 0,
    };
    let mut wave = 0u64;
    while out.waits.len() < n {
        let base = wave * CHUNKS_PER_WAVE as u64;
        let chunks = run_jobs(threads, CHUNKS_PER_WAVE, |c| {
            let mut rng = stream_rng(seed, stream_id(tag, base + c));
            (0..TRAJECTORIES_PER_CHUNK)
                .map(|_| Ok(draw(&mut rng)?))
                .collect::<Result<Vec<_>>>()
        })?;
        for traj in chunks.into_iter().flatten() {
            if out.waits.len() >= n {
                break;
            }
            if let Some(lambda_bar) = lambda_bar {
                tally_trivial(model, beta, lambda_bar, &traj, &mut out)?;
            }
            for r in strip_trivial(&traj).records {
                out.waits.push(r.wait);
                if let ActionId::Action(a) = r.action {
                    out.actions[a] += 1;
                }
            }
        }
        wave += 1;
        if wave > 10_000 {
            bail!("model produced too few arrivals to collect {n} samples");
        }
    }
    Ok(out)
}

fn tally_trivial(
    model: &TabularAdp,
    beta: Temperature,
    lambda_bar: f64,
    traj: &Trajectory<usize>,
    out: &mut PathSample,
) -> Result<()> {
    let mut x = traj.initial_state;
    let mut clock_start = 0.0;
    for r in &traj.records {
        let p_id = 1.0 - total_rate(model, &x, r.time - clock_start, beta)? / lambda_bar;
        out.id_expected += p_id;
        out.id_variance += p_id * (1.0 - p_id);
        out.arrivals += 1;
        if r.action.is_trivial() {
            out.id_observed += 1.0;
        } else {
            clock_start = r.time;
        }
        x = r.state;
    }
    Ok(())
}

pub fn run_validate(args: &ValidateArgs) -> Result<ValidationReport> {
    let model = load_model(&args.model)?;
    let beta = Temperature::new(args.beta)?;
    let th = Thresholds {
        ks_critical_scale: args.ks_critical_scale,
        chi2_p_floor: args.chi2_p_floor,
        n_samples: args.samples,
    };
    if th.ks_critical_scale <= 0.0 || th.chi2_p_floor <= 0.0 || th.n_samples < 2 {
        bail!("thresholds must be positive and at least two samples are needed");
    }
    let (seed, threads, n) = (args.run.seed, args.run.streams, args.samples);
    let s_count = model.state_count();
    let mut tests = Vec::new();

    let swapped = SwappedActions(&model);
    for x in 0..s_count {
        if total_rate(&model, &x, 0.0, beta)? == 0.0 && model.has_constant_rates() {
            continue;
        }
        let iaa = sample_steps(&model, s_count, n, threads, seed, 2 * x as u64, |rng| {
            sample_iaa_step(&model, &x, beta, f64::INFINITY, rng)
        })?;
        let aaa = if args.inject_fault == Some(Fault::SwappedAaaPmf) {
            sample_steps(&model, s_count, n, threads, seed, 2 * x as u64 + 1, |rng| {
                sample_aaa_step(&swapped, &x, beta, f64::INFINITY, rng)
            })?
        } else {
            sample_steps(&model, s_count, n, threads, seed, 2 * x as u64 + 1, |rng| {
                sample_aaa_step(&model, &x, beta, f64::INFINITY, rng)
            })?
        };
        tests.push(ks_test(
            format!("iaa_vs_aaa/x={x}/wait_ks"),
            &iaa.waits,
            &aaa.waits,
            &th,
        ));
        tests.push(chi2_test(
            format!("iaa_vs_aaa/x={x}/action_chi2"),
            &iaa.actions,
            &aaa.actions,
            &th,
        ));
        tests.push(chi2_test(
            format!("iaa_vs_aaa/x={x}/next_state_chi2"),
            &iaa.next_states,
            &aaa.next_states,
            &th,
        ));
    }

    let horizon = args.horizon_time;
    if !(horizon > 0.0 && horizon.is_finite()) {
        bail!("--horizon-time must be positive and finite");
    }
    let path_tag_base = 1u64 << 20;
    let x0 = model.initial_state();
    let reference = sample_paths(&model, beta, None, n, threads, seed, path_tag_base, |rng| {
        simulate(&model, Sampler::Iaa, beta, Horizon::MaxTime(horizon), x0, rng)
    })?;
    let required = model.global_rate_bound(beta, horizon)?.unwrap_or(0.0);
    let lambda_bars = if args.inject_fault == Some(Fault::LowLambdaBar) {
        vec![required / 2.0]
    } else {
        args.lambda_bar.clone()
    };
    for (i, &lambda_bar) in lambda_bars.iter().enumerate() {
        let label = format!("unif/lambda_bar={lambda_bar}");
        let bound_ok = check_uniformization_bound(&model, lambda_bar, beta, horizon).is_ok();
        tests.push(TestOutcome {
            name: format!("{label}/rate_bound"),
            statistic: required,
            p_value: None,
            threshold: lambda_bar,
            pass: bound_ok,
            sample_sizes: [0, 0],
        });
        if !bound_ok {
            continue;
        }
        let tag = path_tag_base + 1 + i as u64;
        let unif = sample_paths(&model, beta, Some(lambda_bar), n, threads, seed, tag, |rng| {
            sample_uniformized(&model, lambda_bar, beta, horizon, x0, rng)
        })?;
        tests.push(ks_test(format!("{label}/wait_ks"), &reference.waits, &unif.waits, &th));
        tests.push(chi2_test(
            format!("{label}/action_chi2"),
            &reference.actions,
            &unif.actions,
            &th,
        ));
        tests.push(id_rate_test(format!("{label}/id_rate_z"), &unif));
    }

    let overall_pass = tests.iter().all(|t| t.pass);
    let report = ValidationReport {
        overall_pass,
        seed,
        beta: args.beta,
        thresholds: th,
        injected_fault: args.inject_fault.map(|f| format!("{f:?}")),
        tests,
    };
    let out = &args.run.out;
    ensure_dir(out)?;
    write_json(
        &out.join("run_config.json"),
        &RunConfig {
            command: "validate-equivalence".into(),
            model: args.model.display().to_string(),
            sampler: None,
            lambda_bar: None,
            beta: args.beta,
            horizon: Some(Horizon::MaxTime(horizon)),
            seed,
            replications: 1,
            thresholds: Some(th),
        },
    )?;
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

/// Observed count of Id arrivals against `Σ (1 − λ_x(w)/λ̄)` over arrivals,
/// as a z-score with threshold 3.
fn id_rate_test(name: String, sample: &PathSample) -> TestOutcome {
    let gap = sample.id_observed - sample.id_expected;
    let z = if sample.id_variance > 0.0 {
        gap / sample.id_variance.sqrt()
    } else if gap.abs() < 0.5 {
        0.0
    } else {
        f64::INFINITY
    };
    TestOutcome {
        name,
        statistic: z.abs(),
        p_value: None,
        threshold: 3.0,
        pass: z.abs() < 3.0,
        sample_sizes: [sample.arrivals, 0],
    }
}
