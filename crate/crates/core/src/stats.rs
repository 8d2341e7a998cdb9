//! Goodness-of-fit statistics used by the validation harness and tests.
//!
//! Kolmogorov–Smirnov statistics are returned raw; callers compare them to a
//! critical value of the form `scale·√((n+m)/(n·m))`. Chi-square tests return
//! a p-value from the chi-square survival function.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Default critical scale for KS tests, roughly the 0.1% level.
pub const KS_CRITICAL_SCALE: f64 = 1.95;
/// Default p-value floor for chi-square tests.
pub const CHI2_P_FLOOR: f64 = 0.001;

/// One-sample KS statistic `sup |F_n(x) − F(x)|`.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter().enumerate().fold(0.0, |d, (i, &x)| {
        let f = cdf(x);
        d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs())
    })
}

/// Two-sample KS statistic `sup |F_a(x) − F_b(x)|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        let v = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= v {
            i += 1;
        }
        while j < ys.len() && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Critical value `scale·√((n+m)/(n·m))`; equals `scale·√(2/n)` when `n = m`.
pub fn ks_two_sample_critical(n: usize, m: usize, scale: f64) -> f64 {
    let (n, m) = (n as f64, m as f64);
    scale * ((n + m) / (n * m)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

impl ChiSquare {
    fn trivial() -> Self {
        ChiSquare {
            statistic: 0.0,
            dof: 0,
            p_value: 1.0,
        }
    }

    fn from_stat(statistic: f64, dof: usize) -> Self {
        if dof == 0 {
            return Self::trivial();
        }
        let dist = ChiSquared::new(dof as f64).expect("positive dof");
        ChiSquare {
            statistic,
            dof,
            p_value: dist.sf(statistic),
        }
    }
}

/// Pearson goodness of fit of `observed` counts against `probs`.
///
/// Adjacent cells are pooled left to right until each expected count is at
/// least 5; a short final group is folded into its predecessor.
pub fn chi2_goodness_of_fit(observed: &[u64], probs: &[f64]) -> ChiSquare {
    assert_eq!(observed.len(), probs.len());
    let total: u64 = observed.iter().sum();
    if total == 0 {
        return ChiSquare::trivial();
    }
    let n = total as f64;
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (&c, &p) in observed.iter().zip(probs) {
        o += c as f64;
        e += p * n;
        if e >= 5.0 {
            cells.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 || o > 0.0 {
        match cells.last_mut() {
            Some(last) => {
                last.0 += o;
                last.1 += e;
            }
            None => cells.push((o, e)),
        }
    }
    let stat = cells.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    ChiSquare::from_stat(stat, cells.len().saturating_sub(1))
}

/// Pearson independence test on an `r × c` contingency table. Empty rows and
/// columns are dropped before computing degrees of freedom.
pub fn chi2_independence(table: &[Vec<u64>]) -> ChiSquare {
    let rows: Vec<&Vec<u64>> = table.iter().filter(|r| r.iter().sum::<u64>() > 0).collect();
    if rows.is_empty() {
        return ChiSquare::trivial();
    }
    let width = rows[0].len();
    let cols: Vec<usize> = (0..width)
        .filter(|&j| rows.iter().map(|r| r[j]).sum::<u64>() > 0)
        .collect();
    if rows.len() < 2 || cols.len() < 2 {
        return ChiSquare::trivial();
    }
    let row_tot: Vec<f64> = rows.iter().map(|r| cols.iter().map(|&j| r[j] as f64).sum()).collect();
    let col_tot: Vec<f64> = cols.iter().map(|&j| rows.iter().map(|r| r[j] as f64).sum()).collect();
    let n: f64 = row_tot.iter().sum();
    let mut stat = 0.0;
    for (i, r) in rows.iter().enumerate() {
        for (k, &j) in cols.iter().enumerate() {
            let e = row_tot[i] * col_tot[k] / n;
            stat += (r[j] as f64 - e).powi(2) / e;
        }
    }
    ChiSquare::from_stat(stat, (rows.len() - 1) * (cols.len() - 1))
}

/// Homogeneity of two categorical samples given as count vectors.
pub fn chi2_homogeneity(a: &[u64], b: &[u64]) -> ChiSquare {
    chi2_independence(&[a.to_vec(), b.to_vec()])
}

/// Sample mean and its standard error.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Lag-one sample autocorrelation.
pub fn lag1_autocorrelation(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 3 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    if var == 0.0 {
        return 0.0;
    }
    let cov: f64 = xs.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
    cov / var
}

/// Permutation test of serial independence: compares `|lag-1 autocorrelation|`
/// with its distribution under random shuffles. Returns the p-value.
pub fn permutation_serial_test<R: Rng + ?Sized>(xs: &[f64], permutations: usize, rng: &mut R) -> f64 {
    let observed = lag1_autocorrelation(xs).abs();
    let mut buf = xs.to_vec();
    let mut at_least = 0usize;
    for _ in 0..permutations {
        buf.shuffle(rng);
        if lag1_autocorrelation(&buf).abs() >= observed {
            at_least += 1;
        }
    }
    (1 + at_least) as f64 / (1 + permutations) as f64
}

/// `ln Γ(n+1)` for integer `n` by direct summation below 256, Stirling above.
pub fn ln_factorial(n: u64) -> f64 {
    if n < 256 {
        (2..=n).map(|k| (k as f64).ln()).sum()
    } else {
        statrs::function::gamma::ln_gamma(n as f64 + 1.0)
    }
}

/// Poisson pmf `mean^k e^{-mean} / k!`.
pub fn poisson_pmf(k: u64, mean: f64) -> f64 {
    if mean == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    (k as f64 * mean.ln() - mean - ln_factorial(k)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand_distr::{Distribution, Exp};

    #[test]
    fn ks_one_sample_small_case() {
        // single point at 0.5 against U(0,1): sup gap is 0.5
        assert!((ks_one_sample(&[0.5], |x| x) - 0.5).abs() < 1e-15);
        let xs = [0.1, 0.2, 0.9];
        // F_n jumps to 2/3 at 0.2 where F = 0.2
        assert!((ks_one_sample(&xs, |x| x) - (2.0 / 3.0 - 0.2)).abs() < 1e-15);
    }

    #[test]
    fn ks_two_sample_extremes() {
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[3.0, 4.0]), 1.0);
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((ks_two_sample_critical(100_000, 100_000, 1.95) - 1.95 * (2e-5f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ks_detects_same_and_different_laws() {
        let mut rng = stream_rng(11, 0);
        let e1 = Exp::new(1.0).unwrap();
        let e2 = Exp::new(1.3).unwrap();
        let a: Vec<f64> = (0..20_000).map(|_| e1.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..20_000).map(|_| e1.sample(&mut rng)).collect();
        let c: Vec<f64> = (0..20_000).map(|_| e2.sample(&mut rng)).collect();
        let crit = ks_two_sample_critical(20_000, 20_000, KS_CRITICAL_SCALE);
        assert!(ks_two_sample(&a, &b) < crit);
        assert!(ks_two_sample(&a, &c) > crit);
        assert!(ks_one_sample(&a, |x| 1.0 - (-x).exp()) < 1.95 / (20_000f64).sqrt());
    }

    #[test]
    fn chi2_cases() {
        let fit = chi2_goodness_of_fit(&[25, 75], &[0.25, 0.75]);
        assert_eq!(fit.statistic, 0.0);
        assert_eq!(fit.p_value, 1.0);
        let off = chi2_goodness_of_fit(&[500, 500], &[0.25, 0.75]);
        assert!(off.p_value < 1e-10);
        let single = chi2_homogeneity(&[10], &[20]);
        assert_eq!(single.p_value, 1.0);
        let hom = chi2_homogeneity(&[100, 300], &[100, 300]);
        assert!(hom.statistic.abs() < 1e-12);
        // known value: 2x2 table [[10,20],[30,40]] → 0.7937 (no continuity correction)
        let t = chi2_independence(&[vec![10, 20], vec![30, 40]]);
        assert!((t.statistic - 0.793_650_793_650_8).abs() < 1e-9);
        assert_eq!(t.dof, 1);
    }

    #[test]
    fn poisson_pmf_sums_to_one() {
        let s: f64 = (0..100).map(|k| poisson_pmf(k, 7.5)).sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!((poisson_pmf(1, 0.1) - 0.1 * (-0.1f64).exp()).abs() < 1e-16);
    }

    #[test]
    fn permutation_test_flags_trend() {
        let mut rng = stream_rng(3, 0);
        let trending: Vec<f64> = (0..200).map(|i| (i as f64 * 0.05).sin()).collect();
        assert!(permutation_serial_test(&trending, 200, &mut rng) < 0.01);
    }
}
