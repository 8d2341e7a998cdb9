use adp_core::adp::{
    sample_aaa_step, sample_iaa_step, simulate, strip_trivial, ActionId, AdpModel, Horizon, Sampler, TabularAdp,
    TransitionKernel,
};
use adp_core::point_process::{path_log_density, sample_path, sample_renewal_path};
use adp_core::rate::{RateFunction, Temperature};
use adp_core::rng::stream_rng;
use adp_core::spiking::SpikingNetwork;
use adp_core::stats::{
    chi2_goodness_of_fit, chi2_homogeneity, ks_two_sample, ks_two_sample_critical, mean_stderr, poisson_pmf,
    CHI2_P_FLOOR, KS_CRITICAL_SCALE,
};

const N: usize = 50_000;

fn time_varying_model() -> TabularAdp {
    let mut m = TabularAdp::new(2, vec!["up".into(), "down".into()], 0).unwrap();
    let rates = [
        RateFunction::exp_affine(0.0, 0.5).unwrap(),
        RateFunction::piecewise(vec![0.4, 1.2], vec![2.0, 0.5, 3.0]).unwrap(),
        RateFunction::constant(1.5).unwrap(),
        RateFunction::exp_affine(-0.5, -1.0).unwrap(),
    ];
    for (i, r) in rates.into_iter().enumerate() {
        m.set_rate(i / 2, i % 2, r).unwrap();
    }
    for x in 0..2 {
        m.set_transition(x, 0, TransitionKernel::Fixed(vec![0.3, 0.7])).unwrap();
        m.set_transition(x, 1, TransitionKernel::Fixed(vec![0.8, 0.2])).unwrap();
    }
    m.validate().unwrap();
    m
}

type Draws = (Vec<f64>, Vec<u64>, Vec<u64>);

fn draw_steps<M: AdpModel>(model: &M, x: &M::State, beta: f64, iaa: bool, seed: u64) -> Draws
where
    M::State: Into<usize> + Clone,
{
    let beta = Temperature::new(beta).unwrap();
    let mut rng = stream_rng(seed, 0);
    let mut waits = Vec::with_capacity(N);
    let mut actions = vec![0u64; model.action_count()];
    let mut next = Vec::new();
    for _ in 0..N {
        let step = if iaa {
            sample_iaa_step(model, x, beta, f64::INFINITY, &mut rng)
        } else {
            sample_aaa_step(model, x, beta, f64::INFINITY, &mut rng)
        };
        let step = step.unwrap().expect("some clock rings");
        waits.push(step.wait);
        actions[step.action] += 1;
        let s: usize = step.state.into();
        if next.len() <= s {
            next.resize(s + 1, 0);
        }
        next[s] += 1;
    }
    (waits, actions, next)
}

fn assert_same(a: &Draws, b: &Draws) {
    let d = ks_two_sample(&a.0, &b.0);
    let crit = ks_two_sample_critical(N, N, KS_CRITICAL_SCALE);
    assert!(d < crit, "wait KS {d} vs {crit}");
    let p = chi2_homogeneity(&a.1, &b.1).p_value;
    assert!(p > CHI2_P_FLOOR, "action chi2 p {p}");
    let mut na = a.2.clone();
    let mut nb = b.2.clone();
    let len = na.len().max(nb.len());
    na.resize(len, 0);
    nb.resize(len, 0);
    let p = chi2_homogeneity(&na, &nb).p_value;
    assert!(p > CHI2_P_FLOOR, "next-state chi2 p {p}");
}

#[test]
fn iaa_and_aaa_agree_on_time_varying_rates() {
    let m = time_varying_model();
    for x in 0..2 {
        for beta in [1.0, 2.0, 0.5] {
            let iaa = draw_steps(&m, &x, beta, true, 11 + x as u64);
            let aaa = draw_steps(&m, &x, beta, false, 101 + x as u64);
            assert_same(&iaa, &aaa);
        }
    }
}

#[test]
fn uniformization_preserves_path_law() {
    let m = time_varying_model();
    let beta = Temperature::ONE;
    let horizon = 2.0;
    let collect = |sampler: Sampler, seed: u64| {
        let mut rng = stream_rng(seed, 0);
        let mut counts = vec![0u64; 40];
        let mut first = Vec::new();
        let mut ids = 0usize;
        for _ in 0..20_000 {
            let t = simulate(&m, sampler, beta, Horizon::MaxTime(horizon), 0, &mut rng).unwrap();
            ids += t.records.iter().filter(|r| r.action == ActionId::Trivial).count();
            let s = strip_trivial(&t);
            counts[s.len().min(39)] += 1;
            if let Some(r) = s.records.first() {
                first.push(r.time);
            }
        }
        (counts, first, ids)
    };
    let (c_iaa, f_iaa, id_iaa) = collect(Sampler::Iaa, 3);
    assert_eq!(id_iaa, 0);
    for (lambda_bar, seed) in [(8.0, 4), (16.0, 5)] {
        let (c_u, f_u, ids) = collect(Sampler::Uniformized { lambda_bar }, seed);
        assert!(ids > 0);
        let p = chi2_homogeneity(&c_iaa, &c_u).p_value;
        assert!(p > CHI2_P_FLOOR, "count chi2 p {p} at {lambda_bar}");
        let d = ks_two_sample(&f_iaa, &f_u);
        let crit = ks_two_sample_critical(f_iaa.len(), f_u.len(), KS_CRITICAL_SCALE);
        assert!(d < crit, "first arrival KS {d} vs {crit}");
    }
}

#[test]
fn importance_weights_average_to_one() {
    let target = RateFunction::exp_affine(0.0, 1.0).unwrap();
    for level in [0.5, 1.0, 2.0] {
        let proposal = RateFunction::constant(level).unwrap();
        let mut rng = stream_rng(7, level.to_bits());
        let w: Vec<f64> = (0..40_000)
            .map(|_| {
                let p = sample_path(&proposal, Temperature::ONE, 1.0, &mut rng).unwrap();
                (path_log_density(&target, Temperature::ONE, &p).unwrap()
                    - path_log_density(&proposal, Temperature::ONE, &p).unwrap())
                .exp()
            })
            .collect();
        let (m, se) = mean_stderr(&w);
        assert!((m - 1.0).abs() < 3.0 * se, "level {level}: mean {m} se {se}");
    }
}

#[test]
fn constant_rate_renewal_and_poisson_counts_match() {
    let f = RateFunction::constant(1.7).unwrap();
    let mut rng = stream_rng(9, 0);
    let horizon = 2.0;
    let cells = 12;
    let probs: Vec<f64> = {
        let mut p: Vec<f64> = (0..cells as u64 - 1).map(|k| poisson_pmf(k, 1.7 * horizon)).collect();
        p.push(1.0 - p.iter().sum::<f64>());
        p
    };
    for renewal in [false, true] {
        let mut counts = vec![0u64; cells];
        for _ in 0..N {
            let p = if renewal {
                sample_renewal_path(&f, Temperature::ONE, horizon, &mut rng)
            } else {
                sample_path(&f, Temperature::ONE, horizon, &mut rng)
            }
            .unwrap();
            counts[p.count().min(cells - 1)] += 1;
        }
        let p = chi2_goodness_of_fit(&counts, &probs).p_value;
        assert!(p > CHI2_P_FLOOR, "renewal={renewal}: p {p}");
    }
}

#[test]
fn spiking_iaa_and_aaa_agree() {
    let net = SpikingNetwork {
        n: 2,
        weights: vec![vec![0.0, 0.4], vec![-0.3, 0.0]],
        tau: 1.3,
        gain: 2.0,
        threshold: 0.5,
        reset: 0.0,
        u0: vec![1.0, -0.5],
    };
    let adp = net.as_adp().unwrap();
    let x0 = net.initial_state();
    let beta = Temperature::ONE;
    let draw = |iaa: bool, seed: u64| {
        let mut rng = stream_rng(seed, 0);
        let mut waits = Vec::with_capacity(N);
        let mut actions = vec![0u64; 2];
        for _ in 0..N {
            let step = if iaa {
                sample_iaa_step(&adp, &x0, beta, f64::INFINITY, &mut rng)
            } else {
                sample_aaa_step(&adp, &x0, beta, f64::INFINITY, &mut rng)
            };
            let step = step.unwrap().expect("spike");
            waits.push(step.wait);
            actions[step.action] += 1;
        }
        (waits, actions)
    };
    let (wi, ai) = draw(true, 21);
    let (wa, aa) = draw(false, 22);
    let d = ks_two_sample(&wi, &wa);
    assert!(d < ks_two_sample_critical(N, N, KS_CRITICAL_SCALE), "KS {d}");
    let p = chi2_homogeneity(&ai, &aa).p_value;
    assert!(p > CHI2_P_FLOOR, "p {p}");
}
