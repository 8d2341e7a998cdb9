//! Inhomogeneous Poisson and renewal counting processes on the half-line.
//!
//! Wait times are drawn by exact inversion of the integrated rate when the
//! rate family has a closed-form inverse and by thinning against the rate
//! majorant otherwise. Finite horizons are the normal mode: a clock that does
//! not ring before its horizon yields [`WaitOutcome::NoArrival`].

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rate::{Inversion, RateError, RateFunction, Temperature};
use crate::stats::poisson_pmf;

/// Default number of explicit cells in a [`BinDistribution`].
pub const DEFAULT_N_MAX: usize = 32;

/// First thinning window length; windows double after each empty window.
const THINNING_WINDOW: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PointProcessError {
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error("rate vanishes at arrival time {time}; path has zero density")]
    ZeroRateAtArrival { time: f64 },
    #[error("invalid arrival path: {0}")]
    InvalidPath(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WaitOutcome {
    Arrival(f64),
    NoArrival,
}

impl WaitOutcome {
    pub fn time(self) -> Option<f64> {
        match self {
            WaitOutcome::Arrival(t) => Some(t),
            WaitOutcome::NoArrival => None,
        }
    }
}

/// Arrival times `0 < t_1 < … < t_n ≤ T` of one path on `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalPath {
    pub horizon: f64,
    pub arrivals: Vec<f64>,
}

impl ArrivalPath {
    pub fn new(horizon: f64, arrivals: Vec<f64>) -> Result<Self, PointProcessError> {
        let path = ArrivalPath { horizon, arrivals };
        path.validate()?;
        Ok(path)
    }

    pub fn validate(&self) -> Result<(), PointProcessError> {
        if !(self.horizon > 0.0) {
            return Err(PointProcessError::InvalidPath(format!("horizon {}", self.horizon)));
        }
        if let Some(&first) = self.arrivals.first() {
            if !(first > 0.0) {
                return Err(PointProcessError::InvalidPath("arrivals must be > 0".into()));
            }
        }
        if self.arrivals.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(PointProcessError::InvalidPath("arrivals must strictly increase".into()));
        }
        if self.arrivals.last().is_some_and(|&t| t > self.horizon) {
            return Err(PointProcessError::InvalidPath("arrival beyond horizon".into()));
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.arrivals.len()
    }

    /// Gaps between consecutive arrivals, the first measured from 0.
    pub fn inter_arrivals(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.arrivals
            .iter()
            .map(|&t| {
                let w = t - prev;
                prev = t;
                w
            })
            .collect()
    }
}

/// Distribution of the arrival count in one bin of width `delta`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinDistribution {
    pub delta: f64,
    /// `probs[n] = P(X = n)` for `n = 0..=n_max`.
    pub probs: Vec<f64>,
    /// `P(X > n_max)`.
    pub tail_mass: f64,
}

impl BinDistribution {
    /// `P(X ≥ k)`, summed from the small cells upward.
    pub fn mass_at_least(&self, k: usize) -> f64 {
        let explicit: f64 = self.probs.iter().skip(k).rev().sum();
        explicit + self.tail_mass
    }
}

/// First arrival after `start` of the process with rate `λ(t)^β`, or
/// `NoArrival` if none occurs in `(start, horizon]`.
pub fn sample_wait<R: Rng + ?Sized>(
    f: &RateFunction,
    beta: Temperature,
    start: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<WaitOutcome, PointProcessError> {
    check_window(start, horizon)?;
    let mass: f64 = Exp1.sample(rng);
    match f.invert_integral(start, mass, beta) {
        Inversion::Reached(t) if t <= horizon => Ok(WaitOutcome::Arrival(t)),
        Inversion::Reached(_) | Inversion::Exhausted => Ok(WaitOutcome::NoArrival),
        Inversion::Unsupported => sample_wait_thinning(f, beta, start, horizon, rng),
    }
}

/// A tempered intensity that can be evaluated pointwise and bounded on
/// intervals; the input to the thinning sampler.
pub trait Intensity {
    fn intensity(&self, t: f64) -> Result<f64, RateError>;
    /// Upper bound of the intensity on `[s, t]`.
    fn bound(&self, s: f64, t: f64) -> Result<f64, RateError>;
}

/// `λ(t)^β` for one rate function.
#[derive(Debug, Clone, Copy)]
pub struct Tempered<'a> {
    pub rate: &'a RateFunction,
    pub beta: Temperature,
}

impl Intensity for Tempered<'_> {
    fn intensity(&self, t: f64) -> Result<f64, RateError> {
        self.rate.rate_at(t, self.beta)
    }

    fn bound(&self, s: f64, t: f64) -> Result<f64, RateError> {
        self.rate.majorant(s, t, self.beta)
    }
}

/// `Σ_i λ_i(t)^β`, bounded by the sum of the individual majorants.
#[derive(Debug, Clone, Copy)]
pub struct TemperedSum<'a> {
    pub rates: &'a [&'a RateFunction],
    pub beta: Temperature,
}

impl Intensity for TemperedSum<'_> {
    fn intensity(&self, t: f64) -> Result<f64, RateError> {
        self.rates.iter().map(|r| r.rate_at(t, self.beta)).sum()
    }

    fn bound(&self, s: f64, t: f64) -> Result<f64, RateError> {
        self.rates.iter().map(|r| r.majorant(s, t, self.beta)).sum()
    }
}

/// Thinning sampler for the first arrival of `f`: candidates from a
/// homogeneous process at the window majorant, each kept with probability
/// `λ(t)^β / M`.
///
/// Works for every variant with a finite majorant and is used for callback
/// rates; exposed so the inversion route can be checked against it.
pub fn sample_wait_thinning<R: Rng + ?Sized>(
    f: &RateFunction,
    beta: Temperature,
    start: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<WaitOutcome, PointProcessError> {
    thin_first_arrival(&Tempered { rate: f, beta }, start, horizon, rng)
}

/// First arrival of an arbitrary [`Intensity`] in `(start, horizon]` by
/// thinning over windows that double in length after each empty window.
pub fn thin_first_arrival<I: Intensity + ?Sized, R: Rng + ?Sized>(
    intensity: &I,
    start: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<WaitOutcome, PointProcessError> {
    check_window(start, horizon)?;
    let mut a = start;
    let mut len = THINNING_WINDOW;
    while a < horizon {
        let b = (a + len).min(horizon);
        let m = intensity.bound(a, b)?;
        if !m.is_finite() {
            return Err(RateError::UnboundedMajorant { start: a, end: b }.into());
        }
        if m == 0.0 {
            if horizon.is_infinite() && intensity.bound(a, f64::INFINITY)? == 0.0 {
                return Ok(WaitOutcome::NoArrival);
            }
        } else {
            let mut t = a;
            loop {
                let e: f64 = Exp1.sample(rng);
                t += e / m;
                if t > b {
                    break;
                }
                let u: f64 = rng.random();
                if u * m < intensity.intensity(t)? {
                    return Ok(WaitOutcome::Arrival(t));
                }
            }
        }
        a = b;
        len *= 2.0;
    }
    Ok(WaitOutcome::NoArrival)
}

fn check_window(start: f64, horizon: f64) -> Result<(), PointProcessError> {
    if start < 0.0 || start.is_nan() {
        return Err(RateError::NegativeTime(start).into());
    }
    if horizon.is_nan() || start > horizon {
        return Err(RateError::ReversedInterval { start, end: horizon }.into());
    }
    Ok(())
}

fn check_horizon(horizon: f64) -> Result<(), PointProcessError> {
    if horizon > 0.0 && horizon.is_finite() {
        Ok(())
    } else {
        Err(PointProcessError::InvalidArgument(format!(
            "horizon must be positive and finite, got {horizon}"
        )))
    }
}

/// Poisson path on `[0, horizon]`: each wait starts from the previous arrival
/// in absolute time, so the rate is never reset.
pub fn sample_path<R: Rng + ?Sized>(
    f: &RateFunction,
    beta: Temperature,
    horizon: f64,
    rng: &mut R,
) -> Result<ArrivalPath, PointProcessError> {
    check_horizon(horizon)?;
    let mut arrivals = Vec::new();
    let mut t = 0.0;
    while let WaitOutcome::Arrival(next) = sample_wait(f, beta, t, horizon, rng)? {
        arrivals.push(next);
        t = next;
    }
    Ok(ArrivalPath { horizon, arrivals })
}

/// Renewal path on `[0, horizon]`: the rate argument is the time since the
/// last arrival, with `t = 0` treated as a renewal epoch.
pub fn sample_renewal_path<R: Rng + ?Sized>(
    f: &RateFunction,
    beta: Temperature,
    horizon: f64,
    rng: &mut R,
) -> Result<ArrivalPath, PointProcessError> {
    check_horizon(horizon)?;
    let mut arrivals = Vec::new();
    let mut last = 0.0;
    while let WaitOutcome::Arrival(w) = sample_wait(f, beta, 0.0, horizon - last, rng)? {
        last += w;
        if last > horizon {
            break;
        }
        arrivals.push(last);
    }
    Ok(ArrivalPath { horizon, arrivals })
}

/// `log p(t_1..t_n) = −∫_0^T λ^β + Σ_i β·log λ(t_i)` for a Poisson path.
pub fn path_log_density(f: &RateFunction, beta: Temperature, path: &ArrivalPath) -> Result<f64, PointProcessError> {
    path.validate()?;
    let mut log_density = -f.integrate(0.0, path.horizon, beta)?;
    for &t in &path.arrivals {
        let rate = f.rate_at(t, beta)?;
        if rate == 0.0 {
            return Err(PointProcessError::ZeroRateAtArrival { time: t });
        }
        log_density += rate.ln();
    }
    Ok(log_density)
}

/// Count distribution of a bin `(t, t+δ]` under the frozen-rate
/// approximation, i.e. Poisson with mean `δ·λ(t)^β`.
pub fn discretize_bin(
    f: &RateFunction,
    beta: Temperature,
    t: f64,
    delta: f64,
    n_max: usize,
) -> Result<BinDistribution, PointProcessError> {
    if !(delta > 0.0) {
        return Err(PointProcessError::InvalidArgument(format!("delta {delta}")));
    }
    let mean = delta * f.rate_at(t, beta)?;
    let probs: Vec<f64> = (0..=n_max as u64).map(|n| poisson_pmf(n, mean)).collect();
    Ok(BinDistribution {
        delta,
        tail_mass: poisson_upper_tail(n_max as u64 + 1, mean, probs.iter().sum()),
        probs,
    })
}

/// `P(X ≥ k)` for `X ~ Pois(mean)`: summed directly while the terms matter,
/// otherwise taken as the complement of the explicit cells.
fn poisson_upper_tail(k: u64, mean: f64, explicit: f64) -> f64 {
    if mean == 0.0 {
        return 0.0;
    }
    if (k as f64) < mean {
        return (1.0 - explicit).max(0.0);
    }
    let mut term = poisson_pmf(k, mean);
    let mut sum = 0.0;
    let mut n = k;
    while term > 0.0 && term > sum * 1e-17 {
        sum += term;
        n += 1;
        term *= mean / n as f64;
    }
    sum
}

/// `P(X(t, t+δ) ≥ 1) = 1 − e^{−δ·λ(t)^β}`.
pub fn binary_bin_prob(f: &RateFunction, beta: Temperature, t: f64, delta: f64) -> Result<f64, PointProcessError> {
    if !(delta > 0.0) {
        return Err(PointProcessError::InvalidArgument(format!("delta {delta}")));
    }
    let rate = f.rate_at(t, beta)?;
    Ok(-(-delta * rate).exp_m1())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rate::CallbackRate;
    use crate::rng::stream_rng;
    use crate::stats::{chi2_goodness_of_fit, ks_one_sample, mean_stderr};
    use approx::assert_abs_diff_eq;

    fn b(x: f64) -> Temperature {
        Temperature::new(x).unwrap()
    }

    /// CDF of the first arrival of λ(t) = e^t from 0: 1 − exp(−(e^w − 1)).
    fn exp_affine_cdf(w: f64) -> f64 {
        -(-(w.exp_m1())).exp_m1()
    }

    #[test]
    fn constant_wait_mean() {
        let f = RateFunction::constant(1.0).unwrap();
        let mut rng = stream_rng(1, 0);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| {
                sample_wait(&f, b(1.0), 0.0, f64::INFINITY, &mut rng)
                    .unwrap()
                    .time()
                    .unwrap()
            })
            .collect();
        let (mean, _) = mean_stderr(&draws);
        assert!((mean - 1.0).abs() < 3.0 / (1e5f64).sqrt());
    }

    #[test]
    fn zero_rate_never_arrives() {
        let f = RateFunction::constant(0.0).unwrap();
        let mut rng = stream_rng(1, 0);
        assert_eq!(
            sample_wait(&f, b(1.0), 0.0, 10.0, &mut rng).unwrap(),
            WaitOutcome::NoArrival
        );
        assert_eq!(
            sample_wait(&f, b(1.0), 0.0, f64::INFINITY, &mut rng).unwrap(),
            WaitOutcome::NoArrival
        );
        let p = sample_path(&f, b(1.0), 5.0, &mut rng).unwrap();
        assert!(p.arrivals.is_empty());
    }

    #[test]
    fn reversed_window_is_an_error() {
        let f = RateFunction::constant(1.0).unwrap();
        let mut rng = stream_rng(1, 0);
        assert!(matches!(
            sample_wait(&f, b(1.0), 2.0, 1.0, &mut rng),
            Err(PointProcessError::Rate(RateError::ReversedInterval { .. }))
        ));
        let cb = RateFunction::callback(CallbackRate::new(|_| 1.0));
        assert_eq!(
            sample_wait(&cb, b(1.0), 0.0, 1.0, &mut rng),
            Err(PointProcessError::Rate(RateError::MissingMajorant))
        );
    }

    #[test]
    fn exp_affine_wait_ks_inversion_and_thinning() {
        let f = RateFunction::exp_affine(0.0, 1.0).unwrap();
        let mut rng = stream_rng(2, 0);
        let inv: Vec<f64> = (0..100_000)
            .map(|_| sample_wait(&f, b(1.0), 0.0, 10.0, &mut rng).unwrap().time().unwrap())
            .collect();
        assert!(ks_one_sample(&inv, exp_affine_cdf) < 0.006);
        let mut rng = stream_rng(2, 1);
        let thin: Vec<f64> = (0..100_000)
            .map(|_| {
                sample_wait_thinning(&f, b(1.0), 0.0, 10.0, &mut rng)
                    .unwrap()
                    .time()
                    .unwrap()
            })
            .collect();
        assert!(ks_one_sample(&thin, exp_affine_cdf) < 0.006);
    }

    #[test]
    fn callback_thinning_matches_closed_form() {
        let cb = CallbackRate::new(|t: f64| t.exp()).with_majorant(|_, t: f64| t.exp());
        let f = RateFunction::callback(cb);
        let mut rng = stream_rng(4, 0);
        let draws: Vec<f64> = (0..50_000)
            .map(|_| sample_wait(&f, b(1.0), 0.0, 10.0, &mut rng).unwrap().time().unwrap())
            .collect();
        assert!(ks_one_sample(&draws, exp_affine_cdf) < 1.95 / (5e4f64).sqrt());
    }

    #[test]
    fn path_counts_are_poisson() {
        let f = RateFunction::constant(2.0).unwrap();
        let mut rng = stream_rng(5, 0);
        let counts: Vec<f64> = (0..100_000)
            .map(|_| sample_path(&f, b(1.0), 5.0, &mut rng).unwrap().count() as f64)
            .collect();
        let (mean, _) = mean_stderr(&counts);
        assert!((mean - 10.0).abs() < 3.0 * (10.0f64 / 1e5).sqrt());

        let mut hist = vec![0u64; 41];
        for c in &counts {
            hist[(*c as usize).min(40)] += 1;
        }
        let mut probs: Vec<f64> = (0..40).map(|k| poisson_pmf(k, 10.0)).collect();
        probs.push(1.0 - probs.iter().sum::<f64>());
        assert!(chi2_goodness_of_fit(&hist, &probs).p_value > 0.001);
    }

    #[test]
    fn exp_affine_path_mean_count() {
        let f = RateFunction::exp_affine(0.0, 1.0).unwrap();
        let mut rng = stream_rng(6, 0);
        let counts: Vec<f64> = (0..100_000)
            .map(|_| sample_path(&f, b(1.0), 2.0, &mut rng).unwrap().count() as f64)
            .collect();
        let (mean, se) = mean_stderr(&counts);
        let expected = 2f64.exp() - 1.0;
        assert!((mean - expected).abs() < 3.0 * se, "{mean} vs {expected}");
    }

    #[test]
    fn renewal_paths() {
        let mut rng = stream_rng(7, 0);
        let gated = RateFunction::piecewise(vec![1.0], vec![0.0, 5.0]).unwrap();
        for _ in 0..2_000 {
            let p = sample_renewal_path(&gated, b(1.0), 3.0, &mut rng).unwrap();
            assert!(p.inter_arrivals().iter().all(|&w| w >= 1.0));
            p.validate().unwrap();
        }

        let f = RateFunction::exp_affine(0.0, 1.0).unwrap();
        let mut gaps = Vec::new();
        while gaps.len() < 100_000 {
            let p = sample_renewal_path(&f, b(1.0), 10.0, &mut rng).unwrap();
            // keep gaps opening before t = 6 so the horizon never censors them
            // (P(gap > 4) = exp(-(e^4 - 1)) is negligible)
            let mut start = 0.0;
            for w in p.inter_arrivals() {
                if start <= 6.0 {
                    gaps.push(w);
                }
                start += w;
            }
        }
        gaps.truncate(100_000);
        assert!(ks_one_sample(&gaps, exp_affine_cdf) < 0.006);

        let c = RateFunction::constant(1.5).unwrap();
        let (mut n_poisson, mut n_renewal) = (0.0, 0.0);
        for _ in 0..20_000 {
            n_poisson += sample_path(&c, b(1.0), 4.0, &mut rng).unwrap().count() as f64;
            n_renewal += sample_renewal_path(&c, b(1.0), 4.0, &mut rng).unwrap().count() as f64;
        }
        let se = (6.0f64 / 20_000.0).sqrt() * 2f64.sqrt();
        assert!(((n_poisson - n_renewal) / 20_000.0).abs() < 3.0 * se);
    }

    #[test]
    fn log_density_examples() {
        let c1 = RateFunction::constant(1.0).unwrap();
        let empty = ArrivalPath::new(1.0, vec![]).unwrap();
        assert_abs_diff_eq!(path_log_density(&c1, b(1.0), &empty).unwrap(), -1.0, epsilon = 1e-15);

        let c2 = RateFunction::constant(2.0).unwrap();
        let p = ArrivalPath::new(3.0, vec![0.5, 1.0, 2.0, 2.5]).unwrap();
        assert_abs_diff_eq!(
            path_log_density(&c2, b(1.0), &p).unwrap(),
            -3.227_411_277_760_219,
            epsilon = 1e-12
        );

        let e = RateFunction::exp_affine(0.0, 1.0).unwrap();
        let p = ArrivalPath::new(1.0, vec![0.5]).unwrap();
        assert_abs_diff_eq!(
            path_log_density(&e, b(1.0), &p).unwrap(),
            -(std::f64::consts::E - 1.0) + 0.5,
            epsilon = 1e-12
        );

        let gated = RateFunction::piecewise(vec![1.0], vec![0.0, 5.0]).unwrap();
        let p = ArrivalPath::new(2.0, vec![0.5]).unwrap();
        assert_eq!(
            path_log_density(&gated, b(1.0), &p),
            Err(PointProcessError::ZeroRateAtArrival { time: 0.5 })
        );
        assert!(ArrivalPath::new(1.0, vec![0.5, 0.4]).is_err());
        assert!(ArrivalPath::new(1.0, vec![1.5]).is_err());
    }

    #[test]
    fn path_json_shape() {
        let p = ArrivalPath::new(2.0, vec![0.5, 1.25]).unwrap();
        assert_eq!(
            serde_json::to_string(&p).unwrap(),
            r#"{"horizon":2.0,"arrivals":[0.5,1.25]}"#
        );
    }

    #[test]
    fn bin_examples() {
        let c1 = RateFunction::constant(1.0).unwrap();
        let bin = discretize_bin(&c1, b(1.0), 0.0, 0.1, DEFAULT_N_MAX).unwrap();
        assert_abs_diff_eq!(bin.probs[0], (-0.1f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(bin.probs[1], 0.1 * (-0.1f64).exp(), epsilon = 1e-15);
        let total: f64 = bin.probs.iter().sum::<f64>() + bin.tail_mass;
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        let tiny = discretize_bin(&c1, b(1.0), 0.0, 1e-12, DEFAULT_N_MAX).unwrap();
        assert!(tiny.probs[0] > 1.0 - 1e-11);

        let p = binary_bin_prob(&c1, b(1.0), 0.0, 0.1).unwrap();
        assert_abs_diff_eq!(p, 1.0 - (-0.1f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(p, 1.0 - bin.probs[0], epsilon = 1e-12);
        let zero = RateFunction::constant(0.0).unwrap();
        assert_eq!(binary_bin_prob(&zero, b(1.0), 0.0, 0.3).unwrap(), 0.0);
        let hot = RateFunction::constant(1.5).unwrap();
        assert_eq!(binary_bin_prob(&hot, b(200.0), 0.0, 0.1).unwrap(), 1.0);
        assert!(discretize_bin(&c1, b(1.0), 0.0, 0.0, 4).is_err());
    }

    #[test]
    fn bin_tail_is_little_o_delta() {
        let f = RateFunction::constant(3.0).unwrap();
        let ratios: Vec<f64> = [1e-2, 1e-3, 1e-4]
            .iter()
            .map(|&d| {
                discretize_bin(&f, b(1.0), 0.0, d, DEFAULT_N_MAX)
                    .unwrap()
                    .mass_at_least(2)
                    / d
            })
            .collect();
        assert!(ratios[0] > ratios[1] && ratios[1] > ratios[2]);
        // P(X ≥ 2) ≈ (δλ)²/2
        assert_abs_diff_eq!(ratios[2], 1e-4 * 9.0 / 2.0, epsilon = 1e-6);
    }
}
