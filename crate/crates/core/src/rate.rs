//! Nonnegative rate functions `λ(t)` with inverse-temperature tempering.
//!
//! A [`RateFunction`] is either one of a small closed parametric family, for
//! which integrals, majorants and inverse integrals are available in closed
//! form, or an opaque [`CallbackRate`] whose integral is computed by adaptive
//! Simpson quadrature and whose supremum over an interval must be declared by
//! the caller.
//!
//! Every operation takes a [`Temperature`] and works on the tempered rate
//! `λ(t)^β`. `β = 1` leaves the rate untouched.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Absolute tolerance used by the adaptive Simpson integrator.
pub const QUADRATURE_ABS_TOL: f64 = 1e-10;
/// Maximum recursion depth of the adaptive Simpson integrator.
pub const QUADRATURE_MAX_DEPTH: u32 = 60;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RateError {
    #[error("negative time {0}")]
    NegativeTime(f64),
    #[error("reversed interval: start {start} > end {end}")]
    ReversedInterval { start: f64, end: f64 },
    #[error("adaptive quadrature did not converge on [{start}, {end}]")]
    QuadratureNonConvergence { start: f64, end: f64 },
    #[error("callback rate has no declared majorant")]
    MissingMajorant,
    #[error("majorant on [{start}, {end}] is not finite")]
    UnboundedMajorant { start: f64, end: f64 },
    #[error("inverse temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("invalid rate function: {0}")]
    Invalid(String),
}

/// Inverse temperature `β > 0`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    pub const ONE: Temperature = Temperature(1.0);

    pub fn new(beta: f64) -> Result<Self, RateError> {
        if beta.is_finite() && beta > 0.0 {
            Ok(Temperature(beta))
        } else {
            Err(RateError::InvalidTemperature(beta))
        }
    }

    pub fn beta(self) -> f64 {
        self.0
    }

    /// `x^β` for `x ≥ 0`, with `0^β = 0` and the identity at `β = 1`.
    #[inline]
    pub fn temper(self, x: f64) -> f64 {
        if self.0 == 1.0 {
            x
        } else if x == 0.0 {
            0.0
        } else {
            x.powf(self.0)
        }
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Temperature::ONE
    }
}

impl TryFrom<f64> for Temperature {
    type Error = RateError;

    fn try_from(beta: f64) -> Result<Self, Self::Error> {
        Temperature::new(beta)
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> f64 {
        t.0
    }
}

pub type RateEvaluator = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type MajorantFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Opaque rate `t ↦ λ(t)` with an optional user-declared majorant
/// `(s, t) ↦ M ≥ sup_{τ∈[s,t]} λ(τ)`. Both are untempered.
#[derive(Clone)]
pub struct CallbackRate {
    evaluator: RateEvaluator,
    majorant: Option<MajorantFn>,
}

impl CallbackRate {
    pub fn new<F>(evaluator: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        CallbackRate {
            evaluator: Arc::new(evaluator),
            majorant: None,
        }
    }

    pub fn with_majorant<M>(mut self, majorant: M) -> Self
    where
        M: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        self.majorant = Some(Arc::new(majorant));
        self
    }

    pub fn has_majorant(&self) -> bool {
        self.majorant.is_some()
    }

    fn eval(&self, t: f64) -> Result<f64, RateError> {
        let v = (self.evaluator)(t);
        if v.is_nan() || v < 0.0 {
            Err(RateError::Invalid(format!("callback returned {v} at t = {t}")))
        } else {
            Ok(v)
        }
    }
}

impl fmt::Debug for CallbackRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CallbackRate")
            .field("majorant", &self.majorant.is_some())
            .finish_non_exhaustive()
    }
}

/// A nonnegative intensity `λ(t)` on `t ≥ 0`.
///
/// `PiecewiseConstant` holds `levels.len() == breakpoints.len() + 1` levels;
/// level `k` applies on `[breakpoints[k-1], breakpoints[k])`, with the first
/// level extending to `-∞` and the last to `+∞`.
#[derive(Debug, Clone)]
pub enum RateFunction {
    Constant {
        level: f64,
    },
    PiecewiseConstant {
        breakpoints: Vec<f64>,
        levels: Vec<f64>,
    },
    /// `λ(t) = exp(offset + slope·t)`.
    ExpAffine {
        offset: f64,
        slope: f64,
    },
    Callback(CallbackRate),
}

/// Result of solving `∫_start^t λ(τ)^β dτ = mass` for `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Inversion {
    Reached(f64),
    /// The total remaining mass on `[start, ∞)` is below `mass`.
    Exhausted,
    /// No closed form for this variant.
    Unsupported,
}

impl RateFunction {
    pub fn constant(level: f64) -> Result<Self, RateError> {
        let f = RateFunction::Constant { level };
        f.validate()?;
        Ok(f)
    }

    pub fn piecewise(breakpoints: Vec<f64>, levels: Vec<f64>) -> Result<Self, RateError> {
        let f = RateFunction::PiecewiseConstant { breakpoints, levels };
        f.validate()?;
        Ok(f)
    }

    pub fn exp_affine(offset: f64, slope: f64) -> Result<Self, RateError> {
        let f = RateFunction::ExpAffine { offset, slope };
        f.validate()?;
        Ok(f)
    }

    pub fn callback(cb: CallbackRate) -> Self {
        RateFunction::Callback(cb)
    }

    pub fn zero() -> Self {
        RateFunction::Constant { level: 0.0 }
    }

    /// Checks the structural invariants of the built-in variants.
    pub fn validate(&self) -> Result<(), RateError> {
        match self {
            RateFunction::Constant { level } => {
                if !(level.is_finite() && *level >= 0.0) {
                    return Err(RateError::Invalid(format!("constant level {level}")));
                }
            }
            RateFunction::PiecewiseConstant { breakpoints, levels } => {
                if levels.len() != breakpoints.len() + 1 {
                    return Err(RateError::Invalid(format!(
                        "{} breakpoints need {} levels, got {}",
                        breakpoints.len(),
                        breakpoints.len() + 1,
                        levels.len()
                    )));
                }
                if breakpoints.iter().any(|b| !b.is_finite()) || breakpoints.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(RateError::Invalid(
                        "breakpoints must be finite and strictly increasing".into(),
                    ));
                }
                if levels.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
                    return Err(RateError::Invalid("levels must be finite and >= 0".into()));
                }
            }
            RateFunction::ExpAffine { offset, slope } => {
                if !(offset.is_finite() && slope.is_finite()) {
                    return Err(RateError::Invalid("exp_affine parameters must be finite".into()));
                }
            }
            RateFunction::Callback(_) => {}
        }
        Ok(())
    }

    /// True when the rate is identically zero (built-in variants only).
    pub fn is_identically_zero(&self) -> bool {
        match self {
            RateFunction::Constant { level } => *level == 0.0,
            RateFunction::PiecewiseConstant { levels, .. } => levels.iter().all(|l| *l == 0.0),
            _ => false,
        }
    }

    /// `λ(t)^β`.
    pub fn rate_at(&self, t: f64, beta: Temperature) -> Result<f64, RateError> {
        if t < 0.0 || t.is_nan() {
            return Err(RateError::NegativeTime(t));
        }
        Ok(match self {
            RateFunction::Constant { level } => beta.temper(*level),
            RateFunction::PiecewiseConstant { breakpoints, levels } => beta.temper(levels[piece_index(breakpoints, t)]),
            RateFunction::ExpAffine { offset, slope } => (beta.beta() * (offset + slope * t)).exp(),
            RateFunction::Callback(cb) => beta.temper(cb.eval(t)?),
        })
    }

    /// `∫_s^t λ(τ)^β dτ`. `t` may be `+∞` for the built-in variants.
    pub fn integrate(&self, s: f64, t: f64, beta: Temperature) -> Result<f64, RateError> {
        check_interval(s, t)?;
        if s == t {
            return Ok(0.0);
        }
        Ok(match self {
            RateFunction::Constant { level } => {
                let l = beta.temper(*level);
                if l == 0.0 {
                    0.0
                } else {
                    l * (t - s)
                }
            }
            RateFunction::PiecewiseConstant { breakpoints, levels } => {
                let mut total = 0.0;
                for (a, b, level) in pieces(breakpoints, levels, s, t) {
                    let l = beta.temper(level);
                    if l > 0.0 {
                        total += l * (b - a);
                    }
                }
                total
            }
            RateFunction::ExpAffine { offset, slope } => {
                let c = beta.beta() * slope;
                let start = (beta.beta() * (offset + slope * s)).exp();
                if c == 0.0 {
                    start * (t - s)
                } else {
                    start * (c * (t - s)).exp_m1() / c
                }
            }
            RateFunction::Callback(cb) => {
                if !t.is_finite() {
                    return Err(RateError::QuadratureNonConvergence { start: s, end: t });
                }
                let f = |x: f64| cb.eval(x).map(|v| beta.temper(v));
                adaptive_simpson(f, s, t, QUADRATURE_ABS_TOL, QUADRATURE_MAX_DEPTH)?
            }
        })
    }

    /// An upper bound on `λ(τ)^β` over `τ ∈ [s, t]`; tight for the built-ins.
    pub fn majorant(&self, s: f64, t: f64, beta: Temperature) -> Result<f64, RateError> {
        check_interval(s, t)?;
        Ok(match self {
            RateFunction::Constant { level } => beta.temper(*level),
            RateFunction::PiecewiseConstant { breakpoints, levels } => {
                let lo = piece_index(breakpoints, s);
                let hi = if t.is_finite() {
                    piece_index(breakpoints, t)
                } else {
                    levels.len() - 1
                };
                let max = levels[lo..=hi].iter().copied().fold(0.0, f64::max);
                beta.temper(max)
            }
            RateFunction::ExpAffine { slope, .. } => {
                if *slope > 0.0 {
                    if t.is_finite() {
                        self.rate_at(t, beta)?
                    } else {
                        f64::INFINITY
                    }
                } else {
                    self.rate_at(s, beta)?
                }
            }
            RateFunction::Callback(cb) => {
                let m = cb.majorant.as_ref().ok_or(RateError::MissingMajorant)?;
                let v = m(s, t);
                if v.is_nan() || v < 0.0 {
                    return Err(RateError::Invalid(format!("declared majorant returned {v}")));
                }
                beta.temper(v)
            }
        })
    }

    /// Solves `∫_start^t λ^β = mass` for the smallest such `t`.
    pub(crate) fn invert_integral(&self, start: f64, mass: f64, beta: Temperature) -> Inversion {
        match self {
            RateFunction::Constant { level } => {
                let l = beta.temper(*level);
                if l == 0.0 {
                    Inversion::Exhausted
                } else {
                    Inversion::Reached(start + mass / l)
                }
            }
            RateFunction::PiecewiseConstant { breakpoints, levels } => {
                let mut remaining = mass;
                for (a, b, level) in pieces(breakpoints, levels, start, f64::INFINITY) {
                    let l = beta.temper(level);
                    if l == 0.0 {
                        continue;
                    }
                    let seg = l * (b - a);
                    if remaining <= seg {
                        return Inversion::Reached(a + remaining / l);
                    }
                    remaining -= seg;
                }
                Inversion::Exhausted
            }
            RateFunction::ExpAffine { offset, slope } => {
                let log_start = beta.beta() * (offset + slope * start);
                let c = beta.beta() * slope;
                if c == 0.0 {
                    return Inversion::Reached(start + mass * (-log_start).exp());
                }
                if c > 0.0 {
                    // t = start + ln(1 + x)/c with x = mass·c·e^{-log_start}
                    let log_x = mass.ln() + c.ln() - log_start;
                    let ln1p = if log_x > 30.0 {
                        log_x + (-log_x).exp().ln_1p()
                    } else {
                        log_x.exp().ln_1p()
                    };
                    Inversion::Reached(start + ln1p / c)
                } else {
                    let x = mass * c * (-log_start).exp();
                    if x <= -1.0 || !x.is_finite() {
                        Inversion::Exhausted
                    } else {
                        Inversion::Reached(start + x.ln_1p() / c)
                    }
                }
            }
            RateFunction::Callback(_) => Inversion::Unsupported,
        }
    }

    /// Closed-form `Σ_i λ_i(t)^β` as an untempered rate, when the family allows it.
    ///
    /// Constants and piecewise constants merge into a piecewise constant;
    /// exp-affine rates sharing one slope merge into an exp-affine rate.
    pub fn tempered_sum(rates: &[&RateFunction], beta: Temperature) -> Option<RateFunction> {
        if rates.is_empty() {
            return Some(RateFunction::zero());
        }
        if rates.iter().all(|r| matches!(r, RateFunction::Constant { .. })) {
            let level = rates
                .iter()
                .map(|r| match r {
                    RateFunction::Constant { level } => beta.temper(*level),
                    _ => unreachable!(),
                })
                .sum();
            return Some(RateFunction::Constant { level });
        }
        if rates.iter().all(|r| {
            matches!(
                r,
                RateFunction::Constant { .. } | RateFunction::PiecewiseConstant { .. }
            )
        }) {
            let mut merged: Vec<f64> = rates
                .iter()
                .flat_map(|r| match r {
                    RateFunction::PiecewiseConstant { breakpoints, .. } => breakpoints.clone(),
                    _ => Vec::new(),
                })
                .collect();
            merged.sort_by(f64::total_cmp);
            merged.dedup();
            // level on each merged piece, sampled at a point inside it
            let probe = |k: usize| -> f64 {
                match (k.checked_sub(1).map(|i| merged[i]), merged.get(k)) {
                    (None, Some(&b)) => b - 1.0,
                    (Some(a), Some(&b)) => 0.5 * (a + b),
                    (Some(a), None) => a + 1.0,
                    (None, None) => 0.0,
                }
            };
            let levels = (0..=merged.len())
                .map(|k| {
                    let x = probe(k);
                    rates
                        .iter()
                        .map(|r| match r {
                            RateFunction::Constant { level } => beta.temper(*level),
                            RateFunction::PiecewiseConstant { breakpoints, levels } => {
                                beta.temper(levels[piece_index(breakpoints, x)])
                            }
                            _ => unreachable!(),
                        })
                        .sum()
                })
                .collect();
            return Some(RateFunction::PiecewiseConstant {
                breakpoints: merged,
                levels,
            });
        }
        if let RateFunction::ExpAffine { slope: k0, .. } = rates[0] {
            let mut offsets = Vec::with_capacity(rates.len());
            for r in rates {
                match r {
                    RateFunction::ExpAffine { offset, slope } if slope == k0 => offsets.push(beta.beta() * offset),
                    _ => return None,
                }
            }
            let m = offsets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + offsets.iter().map(|o| (o - m).exp()).sum::<f64>().ln();
            return Some(RateFunction::ExpAffine {
                offset: lse,
                slope: beta.beta() * k0,
            });
        }
        None
    }
}

fn check_interval(s: f64, t: f64) -> Result<(), RateError> {
    if s < 0.0 || s.is_nan() {
        return Err(RateError::NegativeTime(s));
    }
    if t.is_nan() || s > t {
        return Err(RateError::ReversedInterval { start: s, end: t });
    }
    Ok(())
}

fn piece_index(breakpoints: &[f64], t: f64) -> usize {
    breakpoints.partition_point(|&b| b <= t)
}

/// Pieces `(a, b, level)` of a piecewise-constant rate clipped to `[s, t]`.
fn pieces<'a>(breakpoints: &'a [f64], levels: &'a [f64], s: f64, t: f64) -> impl Iterator<Item = (f64, f64, f64)> + 'a {
    let first = piece_index(breakpoints, s);
    (first..levels.len()).map_while(move |k| {
        let a = if k == first { s } else { breakpoints[k - 1] };
        if a >= t {
            return None;
        }
        let b = breakpoints.get(k).copied().unwrap_or(f64::INFINITY).min(t);
        Some((a, b, levels[k]))
    })
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F>(f: F, a: f64, b: f64, tol: f64, max_depth: u32) -> Result<f64, RateError>
where
    F: Fn(f64) -> Result<f64, RateError>,
{
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a)?;
    let fb = f(b)?;
    let m = 0.5 * (a + b);
    let fm = f(m)?;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(&f, a, b, fa, fm, fb, whole, tol, max_depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64, RateError>
where
    F: Fn(f64) -> Result<f64, RateError>,
{
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm)?;
    let frm = f(rm)?;
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if !delta.is_finite() {
        return Err(RateError::QuadratureNonConvergence { start: a, end: b });
    }
    if delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(RateError::QuadratureNonConvergence { start: a, end: b });
    }
    // floor keeps the tolerance meaningful relative to f64 resolution
    let child_tol = (0.5 * tol).max(f64::EPSILON * whole.abs());
    Ok(simpson_step(f, a, m, fa, flm, fm, left, child_tol, depth - 1)?
        + simpson_step(f, m, b, fm, frm, fb, right, child_tol, depth - 1)?)
}

/// Wire form of the serializable variants.
#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RateRepr {
    Constant { level: f64 },
    Piecewise { breakpoints: Vec<f64>, levels: Vec<f64> },
    ExpAffine { offset: f64, slope: f64 },
}

impl Serialize for RateFunction {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let repr = match self {
            RateFunction::Constant { level } => RateRepr::Constant { level: *level },
            RateFunction::PiecewiseConstant { breakpoints, levels } => RateRepr::Piecewise {
                breakpoints: breakpoints.clone(),
                levels: levels.clone(),
            },
            RateFunction::ExpAffine { offset, slope } => RateRepr::ExpAffine {
                offset: *offset,
                slope: *slope,
            },
            RateFunction::Callback(_) => return Err(serde::ser::Error::custom("callback rates cannot be serialized")),
        };
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RateFunction {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let f = match RateRepr::deserialize(deserializer)? {
            RateRepr::Constant { level } => RateFunction::Constant { level },
            RateRepr::Piecewise { breakpoints, levels } => RateFunction::PiecewiseConstant { breakpoints, levels },
            RateRepr::ExpAffine { offset, slope } => RateFunction::ExpAffine { offset, slope },
        };
        f.validate().map_err(serde::de::Error::custom)?;
        Ok(f)
    }
}
