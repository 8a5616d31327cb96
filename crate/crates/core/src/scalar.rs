//! The nonlinearity f(t) = t·exp(t² + α|t|^β), its derivative and primitive,
//! all evaluated through log-space exponents so that a tiny λ or r² can
//! cancel e^{t²} before anything is exponentiated.

use std::fmt;
use std::ops::{Add, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::quad::{self, QuadOptions};
use crate::{Error, Result};

/// Largest exponent handed to `exp` by the binary64 backend.
pub const EXPONENT_BUDGET: f64 = 700.0;

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi)/2`.
///
/// Only the handful of operations needed to keep `u² + 2 log r` free of
/// cancellation are provided.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DoubleDouble {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

impl DoubleDouble {
    pub const ZERO: Self = Self { hi: 0.0, lo: 0.0 };

    pub fn from_f64(x: f64) -> Self {
        Self { hi: x, lo: 0.0 }
    }

    /// Exact square of a binary64 value.
    pub fn square(x: f64) -> Self {
        let hi = x * x;
        let lo = x.mul_add(x, -hi);
        Self { hi, lo }
    }

    /// Exact sum of two binary64 values.
    pub fn sum(a: f64, b: f64) -> Self {
        let (hi, lo) = two_sum(a, b);
        Self { hi, lo }
    }

    pub fn add_f64(self, b: f64) -> Self {
        let (s, e) = two_sum(self.hi, b);
        let (hi, lo) = quick_two_sum(s, e + self.lo);
        Self { hi, lo }
    }

    pub fn mul(self, rhs: Self) -> Self {
        let hi = self.hi * rhs.hi;
        let err = self.hi.mul_add(rhs.hi, -hi);
        let (hi, lo) = quick_two_sum(hi, err + (self.hi * rhs.lo + self.lo * rhs.hi));
        Self { hi, lo }
    }

    pub fn div_f64(self, b: f64) -> Self {
        let q1 = self.hi / b;
        let p = q1 * b;
        let perr = q1.mul_add(b, -p);
        let (s, e) = two_sum(self.hi, -p);
        let q2 = (s + (e - perr + self.lo)) / b;
        let (hi, lo) = quick_two_sum(q1, q2);
        Self { hi, lo }
    }

    pub fn scale(self, k: f64) -> Self {
        // Only used with powers of two, which scale exactly.
        Self {
            hi: self.hi * k,
            lo: self.lo * k,
        }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let (s, e) = two_sum(self.hi, rhs.hi);
        let (t, f) = two_sum(self.lo, rhs.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Self { hi, lo }
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    fn neg(self) -> Self {
        Self {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl fmt::Display for DoubleDouble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:e}", self.to_f64())
    }
}

/// Arithmetic backend for the shooting integrator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    /// Plain binary64 state; amplitudes past the exponent budget are refused.
    Double,
    /// Amplitude-shifted state with a double-double log-radius origin.
    Extended,
    /// Binary64 within the exponent budget, extended beyond it.
    #[default]
    Auto,
}

impl Precision {
    /// Backend actually used for a shot from amplitude `s`.
    pub fn resolve(self, nl: &Nonlinearity, s: f64) -> Result<Precision> {
        let exponent = nl.log_abs_f_unscaled(s);
        match self {
            Precision::Extended => Ok(Precision::Extended),
            Precision::Double if exponent > EXPONENT_BUDGET => Err(Error::Overflow {
                exponent,
                budget: EXPONENT_BUDGET,
                at_radius: None,
            }),
            Precision::Double => Ok(Precision::Double),
            Precision::Auto if exponent > EXPONENT_BUDGET => Ok(Precision::Extended),
            Precision::Auto => Ok(Precision::Double),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::Double => "double",
            Precision::Extended => "extended",
            Precision::Auto => "auto",
        })
    }
}

/// The map t ↦ t·exp(t² + α|t|^β) for fixed (α, β).
///
/// `alpha = 0` is allowed here (the unperturbed Moser nonlinearity);
/// [`ProblemParams`] insists on α > 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nonlinearity {
    alpha: f64,
    beta: f64,
}

impl Nonlinearity {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::InvalidInput(format!("alpha must be >= 0, got {alpha}")));
        }
        if !(beta > 0.0 && beta < 2.0) {
            return Err(Error::InvalidInput(format!(
                "beta must lie in the interval (0, 2), got {beta}"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// α·a^β for a ≥ 0, defined as 0 at a = 0 for every β.
    #[inline]
    pub fn perturbation(&self, a: f64) -> f64 {
        if a == 0.0 {
            0.0
        } else {
            self.alpha * a.powf(self.beta)
        }
    }

    /// g(t) = t² + α|t|^β, so that f(t) = t·e^{g(t)}.
    #[inline]
    pub fn exponent(&self, t: f64) -> f64 {
        t * t + self.perturbation(t.abs())
    }

    /// g′(a) for a > 0.
    pub fn exponent_slope(&self, a: f64) -> f64 {
        if a == 0.0 {
            return if self.beta < 1.0 {
                f64::INFINITY
            } else if self.beta == 1.0 {
                self.alpha
            } else {
                0.0
            };
        }
        2.0 * a + self.alpha * self.beta * a.powf(self.beta - 1.0)
    }

    /// ln|f(t)| without λ; −∞ at t = 0.
    pub fn log_abs_f_unscaled(&self, t: f64) -> f64 {
        t.abs().ln() + self.exponent(t)
    }

    pub fn f(&self, t: f64) -> Result<f64> {
        if t == 0.0 {
            return Ok(0.0);
        }
        let e = self.log_abs_f_unscaled(t);
        check_budget(e)?;
        Ok(t.signum() * e.exp())
    }

    pub fn f_prime(&self, t: f64) -> Result<f64> {
        let a = t.abs();
        let poly = 1.0 + 2.0 * a * a + self.beta * self.perturbation(a);
        let e = self.exponent(a) + poly.ln();
        check_budget(e)?;
        Ok(e.exp())
    }

    /// H(a) = e^{−g(a)}·∫₀^a s·e^{g(s)} ds, which stays bounded (→ 1/2 as a → ∞).
    pub fn scaled_primitive(&self, t: f64) -> Result<f64> {
        let a = t.abs();
        if a == 0.0 {
            return Ok(0.0);
        }
        let pa = self.perturbation(a);
        // Offset variable σ = s − a keeps full resolution next to s = a,
        // where the integrand lives once a is large.
        let integrand = |sigma: f64| {
            let s = a + sigma;
            let dp = if s <= 0.0 {
                -pa
            } else {
                pa * (self.beta * (sigma / a).ln_1p()).exp_m1()
            };
            s * (sigma * (2.0 * a + sigma) + dp).exp()
        };
        // Where g is convex on [a + lo, a], g(s) − g(a) ≤ g′(a)(s − a), so the
        // part below lo = −42/g′(a) contributes less than e^{−42} relative.
        let slope = self.exponent_slope(a);
        let mut lo = -a;
        if slope.is_finite() && a * slope > 42.0 {
            let cut = a - 42.0 / slope;
            let curvature = 2.0 + self.alpha * self.beta * (self.beta - 1.0) * cut.powf(self.beta - 2.0);
            if cut > 0.0 && curvature > 0.0 {
                lo = -42.0 / slope;
            }
        }
        let opts = QuadOptions {
            rel_tol: 1e-12,
            abs_tol: 0.0,
            max_depth: 40,
            max_intervals: 4000,
        };
        Ok(quad::integrate(integrand, lo, 0.0, opts)?.value)
    }

    /// ln F(t), F(t) = ∫₀^{|t|} s·e^{g(s)} ds; −∞ at t = 0.
    pub fn log_primitive(&self, t: f64) -> Result<f64> {
        if t == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(self.exponent(t) + self.scaled_primitive(t)?.ln())
    }

    /// F(t) by direct adaptive quadrature of s·e^{g(s)} (relative tolerance 1e−10).
    pub fn primitive(&self, t: f64) -> Result<f64> {
        let a = t.abs();
        if a == 0.0 {
            return Ok(0.0);
        }
        check_budget(self.log_abs_f_unscaled(a))?;
        let value = quad::integrate(
            |s| s * self.exponent(s).exp(),
            0.0,
            a,
            QuadOptions::with_rel_tol(1e-10),
        )?
        .value;
        Ok(value)
    }
}

fn check_budget(exponent: f64) -> Result<()> {
    if exponent > EXPONENT_BUDGET || exponent.is_nan() {
        Err(Error::Overflow {
            exponent,
            budget: EXPONENT_BUDGET,
            at_radius: None,
        })
    } else {
        Ok(())
    }
}

/// The triple (α, β, λ) with λ cached in log form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    alpha: f64,
    beta: f64,
    lambda: f64,
    log_lambda: f64,
}

impl ProblemParams {
    pub fn new(alpha: f64, beta: f64, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("lambda must be > 0, got {lambda}")));
        }
        Self::build(alpha, beta, lambda, lambda.ln())
    }

    /// Builds the triple from ln λ; λ itself must still be a positive normal number.
    pub fn from_log_lambda(alpha: f64, beta: f64, log_lambda: f64) -> Result<Self> {
        let lambda = log_lambda.exp();
        if !(lambda.is_normal() && log_lambda.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "lambda = exp({log_lambda}) is not representable"
            )));
        }
        Self::build(alpha, beta, lambda, log_lambda)
    }

    fn build(alpha: f64, beta: f64, lambda: f64, log_lambda: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidInput(format!("alpha must be > 0, got {alpha}")));
        }
        Nonlinearity::new(alpha, beta)?;
        Ok(Self {
            alpha,
            beta,
            lambda,
            log_lambda,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn log_lambda(&self) -> f64 {
        self.log_lambda
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        Nonlinearity {
            alpha: self.alpha,
            beta: self.beta,
        }
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.alpha, self.beta, lambda)
    }

    pub fn with_log_lambda(&self, log_lambda: f64) -> Result<Self> {
        Self::from_log_lambda(self.alpha, self.beta, log_lambda)
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        Self::build(self.alpha, beta, self.lambda, self.log_lambda)
    }
}

pub fn nonlinearity_f(t: f64, p: &ProblemParams) -> Result<f64> {
    p.nonlinearity().f(t)
}

pub fn nonlinearity_f_prime(t: f64, p: &ProblemParams) -> Result<f64> {
    p.nonlinearity().f_prime(t)
}

/// λ·f(t) as sign(t)·exp(ln|t| + t² + α|t|^β + ln λ).
pub fn scaled_lambda_f(t: f64, p: &ProblemParams) -> Result<f64> {
    if t == 0.0 {
        return Ok(0.0);
    }
    let e = p.nonlinearity().log_abs_f_unscaled(t) + p.log_lambda;
    check_budget(e)?;
    Ok(t.signum() * e.exp())
}

/// F_β(t) = ∫₀^{|t|} s·e^{s² + α s^β} ds.
pub fn primitive(t: f64, p: &ProblemParams) -> Result<f64> {
    p.nonlinearity().primitive(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(alpha: f64, beta: f64, lambda: f64) -> ProblemParams {
        ProblemParams::new(alpha, beta, lambda).unwrap()
    }

    #[test]
    fn f_at_zero_and_one() {
        let p = params(1.0, 1.0, 1.0);
        assert_eq!(nonlinearity_f(0.0, &p).unwrap(), 0.0);
        let v = nonlinearity_f(1.0, &p).unwrap();
        assert!((v - 7.38905609893065).abs() < 1e-13);
    }

    #[test]
    fn f_at_two_matches_closed_form() {
        // 2·exp(4 + 0.5·2^{1.5}); the exponent is 5.414213562373095...
        let p = params(0.5, 1.5, 1.0);
        let expected = 2.0 * (4.0 + 0.5 * 8f64.sqrt()).exp();
        let v = nonlinearity_f(2.0, &p).unwrap();
        assert!((v - expected).abs() <= 1e-14 * expected);
        // 449.15172260935529592855... from a 40-digit evaluation.
        assert!((v - 449.151_722_609_355_3).abs() < 1e-10, "{v}");
    }

    #[test]
    fn f_prime_values() {
        let p = params(1.0, 1.0, 1.0);
        assert_eq!(nonlinearity_f_prime(0.0, &p).unwrap(), 1.0);
        let e2 = 1f64.exp().powi(2);
        assert!((nonlinearity_f_prime(1.0, &p).unwrap() - 4.0 * e2).abs() < 1e-12);
        for t in [0.3, 1.7] {
            assert_eq!(
                nonlinearity_f_prime(t, &p).unwrap(),
                nonlinearity_f_prime(-t, &p).unwrap()
            );
        }
    }

    #[test]
    fn small_beta_is_finite_at_zero() {
        let p = params(1.0, 0.4, 1.0);
        assert_eq!(nonlinearity_f_prime(0.0, &p).unwrap(), 1.0);
        assert_eq!(nonlinearity_f(0.0, &p).unwrap(), 0.0);
        assert!(nonlinearity_f_prime(1e-300, &p).unwrap().is_finite());
    }

    #[test]
    fn overflow_is_reported() {
        let p = params(1.0, 1.0, 1.0);
        let err = nonlinearity_f(30.0, &p).unwrap_err();
        assert!(matches!(err, Error::Overflow { exponent, .. } if exponent > 900.0));
        assert!(nonlinearity_f_prime(-30.0, &p).is_err());
        assert!(primitive(30.0, &p).is_err());
    }

    #[test]
    fn scaled_lambda_f_cancels_tiny_lambda() {
        let p = params(1.0, 1.0, 1e-6);
        assert_eq!(scaled_lambda_f(0.0, &p).unwrap(), 0.0);
        let v = scaled_lambda_f(20.0, &p).unwrap();
        let naive = 1e-6 * nonlinearity_f(20.0, &p).unwrap();
        assert!(((v - naive) / naive).abs() < 1e-12);
        let expected = (20f64.ln() + 420.0 + 1e-6f64.ln()).exp();
        assert!(((v - expected) / expected).abs() < 1e-14);

        // 26² alone is 676: the naive product is inf while the scaled one is fine.
        let tiny = params(1.0, 1.0, 1e-250);
        assert!(nonlinearity_f(28.0, &tiny).is_err());
        assert!(scaled_lambda_f(28.0, &tiny).unwrap().is_finite());

        let unit = params(1.0, 1.0, 1.0);
        assert!((scaled_lambda_f(1.0, &unit).unwrap() - 7.38905609893065).abs() < 1e-13);
    }

    #[test]
    fn primitive_without_perturbation() {
        let nl = Nonlinearity::new(0.0, 1.0).unwrap();
        assert_eq!(nl.primitive(0.0).unwrap(), 0.0);
        let v = nl.primitive(1.0).unwrap();
        assert!((v - 0.8591409142295226).abs() < 1e-12, "{v}");
    }

    /// Composite Simpson with a fixed 20 000 panels; independent of the adaptive rule.
    fn simpson_primitive(nl: &Nonlinearity, t: f64) -> f64 {
        let n = 20_000;
        let h = t / n as f64;
        let g = |s: f64| s * nl.exponent(s).exp();
        let mut acc = g(0.0) + g(t);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * g(i as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn primitive_matches_composite_oracle() {
        let p = params(1.0, 1.0, 1.0);
        let v = primitive(1.0, &p).unwrap();
        let oracle = simpson_primitive(&p.nonlinearity(), 1.0);
        assert!(((v - oracle) / oracle).abs() < 1e-9, "{v} vs {oracle}");
        assert_eq!(primitive(-1.0, &p).unwrap(), v);
    }

    #[test]
    fn log_primitive_agrees_in_range_and_extends_beyond() {
        let nl = Nonlinearity::new(1.0, 1.2).unwrap();
        for t in [0.01, 0.7, 3.0, 12.0, 25.0] {
            let direct = nl.primitive(t).unwrap().ln();
            let logged = nl.log_primitive(t).unwrap();
            assert!((direct - logged).abs() < 1e-10 * direct.abs().max(1.0), "{t}");
        }
        // F(a) ~ e^{g(a)} / g′(a) for large a.
        let a = 1e4;
        let h = nl.scaled_primitive(a).unwrap();
        let asym = a / nl.exponent_slope(a);
        assert!(((h - asym) / asym).abs() < 1e-6, "{h} vs {asym}");
    }

    #[test]
    fn params_validation() {
        assert!(ProblemParams::new(0.0, 1.0, 1.0).is_err());
        assert!(ProblemParams::new(1.0, 2.0, 1.0).is_err());
        assert!(ProblemParams::new(1.0, 0.0, 1.0).is_err());
        assert!(ProblemParams::new(1.0, 1.0, 0.0).is_err());
        assert!(ProblemParams::from_log_lambda(1.0, 1.0, -800.0).is_err());
        let p = params(2.0, 0.5, 3.0);
        assert!((p.log_lambda() - 3f64.ln()).abs() < 1e-16);
    }

    #[test]
    fn double_double_square_and_sum() {
        let x = 1e5 + 0.123456789;
        let sq = DoubleDouble::square(x);
        // x² − hi is recovered exactly by the FMA residual.
        assert_eq!(sq.lo, x.mul_add(x, -sq.hi));
        let s = DoubleDouble::sum(1e16, 1.0);
        assert_eq!((s - DoubleDouble::from_f64(1e16)).to_f64(), 1.0);
        let a = DoubleDouble::square(3e7) + DoubleDouble::from_f64(-9e14);
        assert_eq!(a.to_f64(), 0.0);
    }

    #[test]
    fn precision_resolution() {
        let nl = Nonlinearity::new(1.0, 1.2).unwrap();
        assert_eq!(Precision::Auto.resolve(&nl, 10.0).unwrap(), Precision::Double);
        assert_eq!(Precision::Auto.resolve(&nl, 40.0).unwrap(), Precision::Extended);
        assert!(Precision::Double.resolve(&nl, 40.0).is_err());
        assert_eq!(Precision::Extended.resolve(&nl, 1.0).unwrap(), Precision::Extended);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn f_is_odd(t in -12.0f64..12.0, alpha in 0.01f64..3.0, beta in 0.05f64..1.95) {
                let nl = Nonlinearity::new(alpha, beta).unwrap();
                prop_assert_eq!(nl.f(-t).unwrap(), -nl.f(t).unwrap());
            }

            #[test]
            fn scaled_over_plain_is_lambda(t in 0.01f64..15.0, log_lambda in -30.0f64..3.0) {
                let p = ProblemParams::from_log_lambda(1.0, 1.3, log_lambda).unwrap();
                let ratio = scaled_lambda_f(t, &p).unwrap() / nonlinearity_f(t, &p).unwrap();
                prop_assert!(((ratio - p.lambda()) / p.lambda()).abs() < 1e-12);
            }

            #[test]
            fn f_increasing_on_positive_axis(a in 0.0f64..20.0, d in 1e-6f64..1.0) {
                let nl = Nonlinearity::new(1.0, 0.7).unwrap();
                prop_assert!(nl.f(a + d).unwrap() > nl.f(a).unwrap());
            }
        }
    }

    #[test]
    fn primitive_derivative_is_f() {
        let nl = Nonlinearity::new(1.0, 1.2).unwrap();
        for i in 0..20 {
            let t = 0.1 + 0.2 * i as f64;
            let h = 1e-4 * t.max(1.0);
            let pr = |x: f64| nl.primitive(x).unwrap();
            let fd = (8.0 * (pr(t + h) - pr(t - h)) - (pr(t + 2.0 * h) - pr(t - 2.0 * h))) / (12.0 * h);
            let f = nl.f(t).unwrap();
            assert!(((fd - f) / f).abs() < 1e-6, "t = {t}: {fd} vs {f}");
        }
    }
}
