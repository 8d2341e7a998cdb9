//! Stochastic integrate-and-fire networks as action-driven processes.
//!
//! Between spikes every potential decays as `u_i(t) = u_i(t_n) e^{-τ(t - t_n)}`.
//! Neuron `j` fires at rate `g(u_j)` with `g(u) = exp(gain·(u − threshold))`.
//! A spike of `j` adds `ω_ij` to every other neuron `i` and resets `u_j`.

use std::borrow::Cow;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adp::{simulate, AdpError, AdpModel, Horizon, Sampler, Trajectory};
use crate::rate::{CallbackRate, RateFunction, Temperature};

#[derive(Debug, Error)]
pub enum SpikingError {
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error(transparent)]
    Adp(#[from] AdpError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpikingNetwork {
    pub n: usize,
    /// `weights[i][j]` is added to neuron `i` when `j` spikes.
    pub weights: Vec<Vec<f64>>,
    pub tau: f64,
    pub gain: f64,
    pub threshold: f64,
    #[serde(default)]
    pub reset: f64,
    pub u0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialState {
    pub potentials: Vec<f64>,
    pub time_of_last_arrival: f64,
}

/// `u_i e^{-τ dt}` for every neuron.
pub fn decay_potentials(state: &PotentialState, dt: f64, tau: f64) -> PotentialState {
    let factor = (-tau * dt).exp();
    PotentialState {
        potentials: state.potentials.iter().map(|u| u * factor).collect(),
        time_of_last_arrival: state.time_of_last_arrival,
    }
}

impl SpikingNetwork {
    /// A network with zero weights and all potentials at `u0`.
    pub fn uncoupled(n: usize, tau: f64, gain: f64, threshold: f64, u0: Vec<f64>) -> Result<Self, SpikingError> {
        let net = SpikingNetwork {
            n,
            weights: vec![vec![0.0; n]; n],
            tau,
            gain,
            threshold,
            reset: 0.0,
            u0,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<(), SpikingError> {
        let bad = |m: String| Err(SpikingError::InvalidNetwork(m));
        if self.n == 0 {
            return bad("no neurons".into());
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return bad(format!("gain must be positive, got {}", self.gain));
        }
        if !self.threshold.is_finite() || !self.reset.is_finite() {
            return bad("threshold and reset must be finite".into());
        }
        if self.weights.len() != self.n || self.weights.iter().any(|r| r.len() != self.n) {
            return bad(format!("weights must be {0}x{0}", self.n));
        }
        if self.weights.iter().flatten().any(|w| !w.is_finite()) {
            return bad("weights must be finite".into());
        }
        if self.u0.len() != self.n || self.u0.iter().any(|u| !u.is_finite()) {
            return bad(format!("u0 must hold {} finite values", self.n));
        }
        Ok(())
    }

    pub fn initial_state(&self) -> PotentialState {
        PotentialState {
            potentials: self.u0.clone(),
            time_of_last_arrival: 0.0,
        }
    }

    /// Untempered `g(u)`.
    pub fn gain_fn(&self, u: f64) -> f64 {
        (self.gain * (u - self.threshold)).exp()
    }

    /// `g(u_j e^{-τw})^β`.
    pub fn spike_rate(&self, state: &PotentialState, j: usize, wait: f64, beta: Temperature) -> f64 {
        let u = state.potentials[j] * (-self.tau * wait).exp();
        (beta.beta() * self.gain * (u - self.threshold)).exp()
    }

    /// Post-spike potentials; the caller sets the arrival time.
    pub fn apply_spike(&self, state: &PotentialState, j: usize) -> PotentialState {
        let mut potentials = state.potentials.clone();
        for (i, u) in potentials.iter_mut().enumerate() {
            if i != j {
                *u += self.weights[i][j];
            }
        }
        potentials[j] = self.reset;
        PotentialState {
            potentials,
            time_of_last_arrival: state.time_of_last_arrival,
        }
    }

    pub fn as_adp(&self) -> Result<SpikingAdp<'_>, SpikingError> {
        self.validate()?;
        Ok(SpikingAdp { net: self })
    }
}

/// A [`SpikingNetwork`] viewed as an ADP with one `Spike_j` action per neuron.
#[derive(Debug, Clone, Copy)]
pub struct SpikingAdp<'a> {
    net: &'a SpikingNetwork,
}

impl SpikingAdp<'_> {
    fn transition(&self, x: &PotentialState, j: usize, wait: f64) -> Result<PotentialState, AdpError> {
        if j >= self.net.n {
            return Err(AdpError::UnknownAction(j));
        }
        let mut next = self.net.apply_spike(&decay_potentials(x, wait, self.net.tau), j);
        next.time_of_last_arrival = x.time_of_last_arrival + wait;
        Ok(next)
    }
}

impl AdpModel for SpikingAdp<'_> {
    type State = PotentialState;

    fn action_count(&self) -> usize {
        self.net.n
    }

    fn action_name(&self, a: usize) -> String {
        format!("Spike_{}", a + 1)
    }

    fn action_rate(&self, x: &PotentialState, a: usize) -> Result<Cow<'_, RateFunction>, AdpError> {
        let &u = x.potentials.get(a).ok_or(AdpError::UnknownAction(a))?;
        let (gain, thr, tau) = (self.net.gain, self.net.threshold, self.net.tau);
        let g = move |v: f64| (gain * (v - thr)).exp();
        // the decayed potential moves monotonically toward 0, so the sup over
        // a window sits at whichever endpoint is larger
        for bound in [g(u), g(0.0)] {
            if !bound.is_finite() {
                return Err(AdpError::MajorantUnavailable(format!("g({u}) overflows")));
            }
        }
        let cb = CallbackRate::new(move |w| g(u * (-tau * w).exp())).with_majorant(move |s, t| {
            if u >= 0.0 {
                g(u * (-tau * s).exp())
            } else if t.is_finite() {
                g(u * (-tau * t).exp())
            } else {
                g(0.0)
            }
        });
        Ok(Cow::Owned(RateFunction::callback(cb)))
    }

    fn sample_next_state<R: Rng + ?Sized>(
        &self,
        x: &PotentialState,
        a: usize,
        wait: f64,
        _beta: Temperature,
        _rng: &mut R,
    ) -> Result<PotentialState, AdpError> {
        self.transition(x, a, wait)
    }

    fn mode_next_state(&self, x: &PotentialState, a: usize, wait: f64) -> Result<PotentialState, AdpError> {
        self.transition(x, a, wait)
    }
}

/// Spike train on `[0, T]` (or the first `N` spikes) from `u0`.
pub fn simulate_spiking<R: Rng + ?Sized>(
    net: &SpikingNetwork,
    sampler: Sampler,
    horizon: Horizon,
    beta: Temperature,
    rng: &mut R,
) -> Result<Trajectory<PotentialState>, SpikingError> {
    let adp = net.as_adp()?;
    Ok(simulate(&adp, sampler, beta, horizon, net.initial_state(), rng)?)
}

/// `(t, neuron)` rows, neurons numbered from 1.
pub fn write_raster<W: Write>(traj: &Trajectory<PotentialState>, out: W) -> Result<(), SpikingError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "neuron"])?;
    for r in &traj.records {
        if let Some(j) = r.action.index() {
            w.serialize((r.time, j + 1))?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Inter-spike intervals of one neuron.
pub fn inter_spike_intervals(traj: &Trajectory<PotentialState>, neuron: usize) -> Vec<f64> {
    let times: Vec<f64> = traj
        .records
        .iter()
        .filter(|r| r.action.index() == Some(neuron))
        .map(|r| r.time)
        .collect();
    times.windows(2).map(|w| w[1] - w[0]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adp::{sample_aaa_step, sample_iaa_step};
    use crate::rng::stream_rng;
    use crate::stats::{mean_stderr, permutation_serial_test};
    use approx::assert_abs_diff_eq;

    fn state(u: &[f64]) -> PotentialState {
        PotentialState {
            potentials: u.to_vec(),
            time_of_last_arrival: 0.0,
        }
    }

    fn rk4_decay(u: f64, tau: f64, dt: f64, steps: usize) -> f64 {
        let h = dt / steps as f64;
        let f = |v: f64| -tau * v;
        (0..steps).fold(u, |v, _| {
            let k1 = f(v);
            let k2 = f(v + 0.5 * h * k1);
            let k3 = f(v + 0.5 * h * k2);
            let k4 = f(v + h * k3);
            v + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        })
    }

    #[test]
    fn decay_examples() {
        assert_abs_diff_eq!(
            decay_potentials(&state(&[1.0]), 1.0, 1.0).potentials[0],
            (-1.0f64).exp(),
            epsilon = 1e-15
        );
        assert_eq!(
            decay_potentials(&state(&[0.3, -2.0]), 0.0, 1.0).potentials,
            vec![0.3, -2.0]
        );
        let closed = decay_potentials(&state(&[2.0]), 2.0, 0.5).potentials[0];
        assert_abs_diff_eq!(closed, rk4_decay(2.0, 0.5, 2.0, 10_000), epsilon = 1e-12);
        assert_abs_diff_eq!(closed, 0.735_758_882_342_885, epsilon = 1e-12);
    }

    #[test]
    fn spike_rate_examples() {
        let net = SpikingNetwork::uncoupled(1, 1.0, 3.7, 0.4, vec![0.4]).unwrap();
        assert_eq!(net.spike_rate(&state(&[0.4]), 0, 0.0, Temperature::ONE), 1.0);
        let net = SpikingNetwork::uncoupled(1, 1.0, 1.0, 0.0, vec![1.0]).unwrap();
        let r = net.spike_rate(&state(&[1.0]), 0, 0.0, Temperature::new(2.0).unwrap());
        assert_abs_diff_eq!(r, 7.389_056_098_930_65, epsilon = 1e-12);
        let lo = net.spike_rate(&state(&[0.5]), 0, 0.3, Temperature::ONE);
        let hi = net.spike_rate(&state(&[1.0]), 0, 0.3, Temperature::ONE);
        assert!(lo < hi);
        let later = net.spike_rate(&state(&[1.0]), 0, 0.6, Temperature::ONE);
        assert!(later <= hi);
    }

    #[test]
    fn apply_spike_examples() {
        let mut net = SpikingNetwork::uncoupled(2, 1.0, 1.0, 0.0, vec![0.0, 1.0]).unwrap();
        net.weights[0][1] = 0.5;
        assert_eq!(net.apply_spike(&state(&[0.0, 1.0]), 1).potentials, vec![0.5, 0.0]);
        let plain = SpikingNetwork::uncoupled(2, 1.0, 1.0, 0.0, vec![0.0, 0.0]).unwrap();
        assert_eq!(plain.apply_spike(&state(&[0.7, 1.0]), 1).potentials, vec![0.7, 0.0]);
        net.weights[1][1] = 9.0;
        net.reset = -0.25;
        assert_eq!(net.apply_spike(&state(&[0.0, 1.0]), 1).potentials[1], -0.25);
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        assert!(SpikingNetwork::uncoupled(1, 0.0, 1.0, 0.0, vec![0.0]).is_err());
        assert!(SpikingNetwork::uncoupled(1, 1.0, -1.0, 0.0, vec![0.0]).is_err());
        assert!(SpikingNetwork::uncoupled(2, 1.0, 1.0, 0.0, vec![0.0]).is_err());
        let json = r#"{"n":1,"weights":[[0]],"tau":1,"gain":1,"threshold":0,"u0":[0.5]}"#;
        let net: SpikingNetwork = serde_json::from_str(json).unwrap();
        assert_eq!(net.reset, 0.0);
        net.validate().unwrap();
    }

    #[test]
    fn overflowing_rate_reports_missing_majorant() {
        let net = SpikingNetwork::uncoupled(1, 1.0, 1.0, 0.0, vec![1e6]).unwrap();
        let adp = net.as_adp().unwrap();
        assert!(matches!(
            adp.action_rate(&net.initial_state(), 0),
            Err(AdpError::MajorantUnavailable(_))
        ));
    }

    #[test]
    fn symmetric_pair_fires_evenly() {
        let mut net = SpikingNetwork::uncoupled(2, 1.0, 1.0, 0.0, vec![0.3, 0.3]).unwrap();
        net.weights = vec![vec![0.0, 0.4], vec![0.4, 0.0]];
        let adp = net.as_adp().unwrap();
        let mut rng = stream_rng(61, 0);
        let n = 100_000;
        let first = (0..n)
            .filter(|_| {
                sample_iaa_step(&adp, &net.initial_state(), Temperature::ONE, f64::INFINITY, &mut rng)
                    .unwrap()
                    .unwrap()
                    .action
                    == 0
            })
            .count();
        let p = first as f64 / n as f64;
        assert!((p - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt());
    }

    #[test]
    fn slow_decay_matches_constant_rate_race() {
        let net = SpikingNetwork::uncoupled(2, 1e-9, 1.0, 0.0, vec![1.0, 0.0]).unwrap();
        let adp = net.as_adp().unwrap();
        let mut rng = stream_rng(62, 0);
        let n = 100_000;
        let first = (0..n)
            .filter(|_| {
                sample_aaa_step(&adp, &net.initial_state(), Temperature::ONE, f64::INFINITY, &mut rng)
                    .unwrap()
                    .unwrap()
                    .action
                    == 0
            })
            .count();
        let e = std::f64::consts::E;
        let target = e / (e + 1.0);
        let p = first as f64 / n as f64;
        assert!((p - target).abs() < 3.0 * (target * (1.0 - target) / n as f64).sqrt());
    }

    #[test]
    fn trajectory_dynamics_are_exact() {
        let mut net = SpikingNetwork::uncoupled(3, 0.8, 2.0, 0.5, vec![0.6, 0.1, -0.4]).unwrap();
        net.weights = vec![vec![0.0, 0.3, -0.2], vec![0.25, 0.0, 0.1], vec![0.4, 0.35, 0.0]];
        net.reset = -0.1;
        let mut rng = stream_rng(63, 0);
        let t = simulate_spiking(&net, Sampler::Iaa, Horizon::MaxTime(20.0), Temperature::ONE, &mut rng).unwrap();
        assert!(t.len() > 10);
        let mut prev = net.initial_state();
        for r in &t.records {
            let j = r.action.index().unwrap();
            let decayed = decay_potentials(&prev, r.wait, net.tau);
            for i in 0..3 {
                let want = if i == j {
                    net.reset
                } else {
                    decayed.potentials[i] + net.weights[i][j]
                };
                assert!((r.state.potentials[i] - want).abs() < 1e-12);
            }
            assert!((r.state.time_of_last_arrival - r.time).abs() < 1e-12);
            prev = r.state.clone();
        }
    }

    #[test]
    fn quiet_network_barely_spikes() {
        let net = SpikingNetwork::uncoupled(3, 1.0, 10.0, 1.0, vec![-3.0; 3]).unwrap();
        let mut rng = stream_rng(64, 0);
        let total: usize = (0..200)
            .map(|_| {
                simulate_spiking(&net, Sampler::Aaa, Horizon::MaxTime(1.0), Temperature::ONE, &mut rng)
                    .unwrap()
                    .len()
            })
            .sum();
        assert!(total <= 2);
    }

    #[test]
    fn single_neuron_intervals_are_exchangeable() {
        let net = SpikingNetwork::uncoupled(1, 1.0, 1.5, 0.2, vec![0.8]).unwrap();
        let mut rng = stream_rng(65, 0);
        let t = simulate_spiking(
            &net,
            Sampler::Iaa,
            Horizon::MaxArrivals(2_000),
            Temperature::ONE,
            &mut rng,
        )
        .unwrap();
        let isi = inter_spike_intervals(&t, 0);
        assert_eq!(isi.len(), 1_999);
        assert!(permutation_serial_test(&isi, 999, &mut rng) > 0.001);
    }

    #[test]
    fn excitation_increases_activity() {
        let means: Vec<f64> = [0.0, 0.5, 1.0]
            .iter()
            .map(|&w| {
                let mut net = SpikingNetwork::uncoupled(3, 1.0, 2.0, 0.5, vec![0.0; 3]).unwrap();
                net.weights[1][0] = w;
                net.weights[2][1] = w;
                let mut rng = stream_rng(66, (w * 10.0) as u64);
                let counts: Vec<f64> = (0..4_000)
                    .map(|_| {
                        simulate_spiking(&net, Sampler::Aaa, Horizon::MaxTime(5.0), Temperature::ONE, &mut rng)
                            .unwrap()
                            .len() as f64
                    })
                    .collect();
                mean_stderr(&counts).0
            })
            .collect();
        assert!(means[0] < means[1] && means[1] < means[2], "{means:?}");
    }

    #[test]
    fn cold_network_fires_the_supra_threshold_neuron() {
        let net = SpikingNetwork::uncoupled(3, 1.0, 1.0, 0.0, vec![-0.4, 0.5, -0.2]).unwrap();
        let adp = net.as_adp().unwrap();
        let beta = Temperature::new(50.0).unwrap();
        let mut rng = stream_rng(67, 0);
        let n = 10_000;
        let hits = (0..n)
            .filter(|_| {
                sample_aaa_step(&adp, &net.initial_state(), beta, f64::INFINITY, &mut rng)
                    .unwrap()
                    .unwrap()
                    .action
                    == 1
            })
            .count();
        assert!(hits as f64 / n as f64 > 0.999);
    }

    #[test]
    fn raster_csv() {
        let net = SpikingNetwork::uncoupled(2, 1.0, 1.0, 0.0, vec![0.0, 0.0]).unwrap();
        let mut t = Trajectory::new(net.initial_state(), Horizon::MaxTime(1.0));
        t.push(0.5, crate::adp::ActionId::Action(1), net.initial_state());
        let mut buf = Vec::new();
        write_raster(&t, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,neuron\n0.5,2\n");
    }
}
