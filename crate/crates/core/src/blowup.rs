//! Blow-up rescaling around a peak.
//!
//! With γ = (2λ μ f(μ))^{−1/2} the rescaled bubble
//! z_n(r) = 2μ(|u(γr + ρ)| − μ) is compared against the Liouville solution
//! z(r) = ln(64/(8 + r²)²) of −Δz = e^z, and z_n − z against the first-order
//! correction φ/μ^{2−β}.

use serde::Serialize;

use crate::analyze::decompose;
use crate::scalar::{DoubleDouble, ProblemParams, EXPONENT_BUDGET};
use crate::solve::RadialSolution;
use crate::{Error, Result};

/// ln γ for peak value μ, in double-double because μ² may be ~10¹².
pub fn log_gamma_scale_dd(mu: f64, p: &ProblemParams) -> Result<DoubleDouble> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::InvalidInput(format!("peak value must be > 0, got {mu}")));
    }
    let nl = p.nonlinearity();
    let rest = std::f64::consts::LN_2 + p.log_lambda() + 2.0 * mu.ln() + nl.perturbation(mu);
    Ok(-DoubleDouble::square(mu).add_f64(rest).scale(0.5))
}

pub fn log_gamma_scale(mu: f64, p: &ProblemParams) -> Result<f64> {
    Ok(log_gamma_scale_dd(mu, p)?.to_f64())
}

/// γ = (2λ μ f(μ))^{−1/2}; errors when γ is not representable.
pub fn gamma_scale(mu: f64, p: &ProblemParams) -> Result<f64> {
    let lg = log_gamma_scale(mu, p)?;
    if -2.0 * lg > EXPONENT_BUDGET {
        return Err(Error::Overflow {
            exponent: -2.0 * lg,
            budget: EXPONENT_BUDGET,
            at_radius: None,
        });
    }
    Ok(lg.exp())
}

/// (z(r), φ(r)) with z = ln(64/(8 + r²)²) and
/// φ = αβ*(ln(8 + r²) + 8/(8 + r²) − 1 − ln 8).
pub fn liouville_reference(r: f64, beta_star: f64, alpha: f64) -> (f64, f64) {
    let q = 8.0 + r * r;
    let z = 64f64.ln() - 2.0 * q.ln();
    // ln(q/8) + 8/q − 1 without cancellation at small r.
    let x = r * r / 8.0;
    let phi = alpha * beta_star * (x.ln_1p() - x / (1.0 + x));
    (z, phi)
}

/// −z′ of the Liouville profile, 4r/(8 + r²).
pub fn liouville_slope(r: f64) -> f64 {
    4.0 * r / (8.0 + r * r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfileSample {
    pub r: f64,
    pub z_n: f64,
    /// z_n′(r).
    pub dz_n: f64,
    pub z_exact: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BubbleDiagnostics {
    pub domain_index: usize,
    pub peak_value: f64,
    /// ln γ; γ itself underflows for μ ≳ 27.
    pub log_gamma: f64,
    pub gamma: f64,
    /// ρ/γ (∞ when γ ≪ ρ beyond f64 range, 0 for the first domain).
    pub peak_over_gamma: f64,
    pub beta_star: f64,
    pub samples: Vec<ProfileSample>,
    /// max |z_n − z| over the samples.
    pub sup_deviation: f64,
    /// Least-squares c in z_n − z ≈ c·φ on r ∈ [0.5, 6].
    pub corr_coefficient: f64,
    /// 1/μ^{2−β}.
    pub predicted_coefficient: f64,
}

impl BubbleDiagnostics {
    /// max |z_n − z| over samples with |r| ≤ r_max.
    pub fn sup_deviation_within(&self, r_max: f64) -> f64 {
        self.samples
            .iter()
            .filter(|s| s.r.abs() <= r_max)
            .map(|s| (s.z_n - s.z_exact).abs())
            .fold(0.0, f64::max)
    }
}

/// The default window r = 0, 0.1, …, 6.
pub fn default_grid() -> Vec<f64> {
    (0..=60).map(|i| i as f64 / 10.0).collect()
}

pub const FIT_WINDOW: (f64, f64) = (0.5, 6.0);

/// Samples z_n on `grid` for domain i with β* = β of the solution.
pub fn rescale_profile(sol: &RadialSolution, i: usize, grid: &[f64]) -> Result<BubbleDiagnostics> {
    rescale_profile_with(sol, i, grid, sol.params.beta())
}

/// As [`rescale_profile`], with the β* entering φ given explicitly.
pub fn rescale_profile_with(
    sol: &RadialSolution,
    i: usize,
    grid: &[f64],
    beta_star: f64,
) -> Result<BubbleDiagnostics> {
    let domains = decompose(sol)?;
    if i == 0 || i > domains.len() {
        return Err(Error::InvalidInput(format!(
            "domain index must lie in 1..={}, got {i}",
            domains.len()
        )));
    }
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty profile grid".into()));
    }
    let dom = domains[i - 1];
    let traj = &sol.trajectory;
    let mu = dom.peak_value;
    let log_gamma = log_gamma_scale_dd(mu, &sol.params)?;
    let lg = log_gamma.to_f64();
    let outer = traj.zeros[i - 1].log_radius;
    let (peak_t, inner_t) = if i == 1 {
        (None, None)
    } else {
        (Some(traj.peaks[i - 2].log_radius), Some(traj.zeros[i - 2].log_radius))
    };
    // γ/ρ is the small parameter of the annular domains.
    let gamma_over_rho = peak_t.map_or(f64::INFINITY, |t| (lg - t.to_f64()).exp());

    // Log-radius of the point γr + ρ.
    let point = |r: f64| -> Option<DoubleDouble> {
        match peak_t {
            None => {
                if r < 0.0 {
                    None
                } else if r == 0.0 {
                    Some(traj.start_log_radius())
                } else {
                    Some(log_gamma.add_f64(r.ln()))
                }
            }
            Some(t) => {
                let x = gamma_over_rho * r;
                if x <= -1.0 {
                    None
                } else {
                    Some(t.add_f64(x.ln_1p()))
                }
            }
        }
    };

    let r_max = grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let r_min = grid.iter().cloned().fold(f64::INFINITY, f64::min);
    let reach = point(r_max).ok_or_else(|| Error::InvalidInput("bad grid".into()))?;
    if (reach - outer).to_f64() >= 0.0 {
        return Err(Error::WindowTooLarge {
            reach: reach.to_f64().exp(),
            limit: outer.to_f64().exp(),
        });
    }
    if r_min < 0.0 {
        let inner_ok = match (point(r_min), inner_t) {
            (Some(p), Some(inner)) => (p - inner).to_f64() > 0.0,
            _ => false,
        };
        if !inner_ok {
            return Err(Error::WindowTooLarge {
                reach: point(r_min).map_or(0.0, |p| p.to_f64().exp()),
                limit: inner_t.map_or(0.0, |t| t.to_f64().exp()),
            });
        }
    }

    let mut samples = Vec::with_capacity(grid.len());
    for &r in grid {
        // r = 0 is the peak itself, where z_n and z_n′ vanish by definition.
        let (z_n, dz_n) = if r == 0.0 {
            (0.0, 0.0)
        } else {
            let t = point(r).expect("grid checked above");
            let s = traj.sample(t).ok_or_else(|| Error::WindowTooLarge {
                reach: t.to_f64().exp(),
                limit: outer.to_f64().exp(),
            })?;
            // |u| − μ: exact offset in the shifted frame of the first domain.
            let excess = if i == 1 && s.frame.u_base == mu {
                s.v()
            } else {
                s.u().abs() - mu
            };
            // z_n′ = 2μ·sign(u)·u′(x)·γ = 2μ·sign(u)·w·γ/x.
            let log_ratio = lg - t.to_f64();
            let dz = 2.0 * mu * dom.sign * s.w() * log_ratio.exp();
            (2.0 * mu * excess, dz)
        };
        let (z_exact, phi) = liouville_reference(r.abs(), beta_star, sol.params.alpha());
        samples.push(ProfileSample {
            r,
            z_n,
            dz_n,
            z_exact,
            phi,
        });
    }

    let sup_deviation = samples
        .iter()
        .map(|s| (s.z_n - s.z_exact).abs())
        .fold(0.0, f64::max);
    let (num, den) = samples
        .iter()
        .filter(|s| s.r >= FIT_WINDOW.0 - 1e-12 && s.r <= FIT_WINDOW.1 + 1e-12)
        .fold((0.0, 0.0), |(n, d), s| (n + (s.z_n - s.z_exact) * s.phi, d + s.phi * s.phi));
    let corr_coefficient = if den > 0.0 { num / den } else { f64::NAN };
    Ok(BubbleDiagnostics {
        domain_index: i,
        peak_value: mu,
        log_gamma: lg,
        gamma: lg.exp(),
        peak_over_gamma: if i == 1 { 0.0 } else { 1.0 / gamma_over_rho },
        beta_star,
        samples,
        sup_deviation,
        corr_coefficient,
        predicted_coefficient: mu.powf(-(2.0 - sol.params.beta())),
    })
}

/// Checks 0 ≤ −z_n′(r) ≤ (r²/2 + Rr)/(r + R) for r ≥ 0 and the mirrored
/// 0 ≤ z_n′(r) ≤ −(r²/2 + Rr)/(r + R) for r < 0, with R = ρ/γ. A slack of
/// 1e−6 (absolute and relative) absorbs interpolation error.
pub fn derivative_bound_check(diag: &BubbleDiagnostics) -> bool {
    let big_r = diag.peak_over_gamma;
    let bound = |r: f64| -> f64 {
        if big_r.is_infinite() {
            r
        } else if r + big_r == 0.0 {
            0.0
        } else {
            (0.5 * r * r + big_r * r) / (r + big_r)
        }
    };
    diag.samples.iter().all(|s| {
        let b = bound(s.r);
        let slack = 1e-6 * (1.0 + b.abs());
        if s.r >= 0.0 {
            -s.dz_n >= -slack && -s.dz_n <= b + slack
        } else {
            s.dz_n >= -slack && s.dz_n <= -b + slack
        }
    })
}
