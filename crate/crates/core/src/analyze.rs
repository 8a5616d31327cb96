//! Nodal decomposition, energies and the exact identities a true solution
//! must satisfy.
//!
//! Integrals of the form ∫ g r dr come from the running integrals carried by
//! the integrator. The log-weighted integrals need their own quadrature on
//! the dense output; in the log-radius t they read ∫ g e^{2t} (t_i − t) dt.

use std::f64::consts::PI;

use serde::Serialize;

use crate::ode::Sample;
use crate::scalar::DoubleDouble;
use crate::solve::RadialSolution;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NodalDomain {
    /// 1-based.
    pub index: usize,
    /// r_{i−1} (0 for the first domain).
    pub inner_radius: f64,
    pub outer_radius: f64,
    pub log_outer_radius: f64,
    /// ρ_i (0 for the first domain).
    pub peak_radius: f64,
    pub log_peak_radius: f64,
    /// μ_i = max |u| on the domain.
    pub peak_value: f64,
    pub sign: f64,
    /// ∫ u′² r dr over the domain.
    pub dirichlet: f64,
    /// ∫ λ u f(u) r dr.
    pub nehari: f64,
    /// ∫ λ F(u) r dr.
    pub potential: f64,
    /// ∫ λ |f(u)| r dr.
    pub mass: f64,
    /// u′(r_i).
    pub outer_slope: f64,
    /// ln |u′(r_i)|, finite even when u′ itself overflows.
    pub log_abs_outer_slope: f64,
    /// r_i·u′(r_i).
    pub outer_flux: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyReport {
    /// ∫_B |∇u|² = 2π Σ dirichlet.
    pub full_dirichlet: f64,
    /// ½ ∫_B |∇u|² − λ ∫_B F(u).
    pub functional: f64,
    pub per_domain: Vec<NodalDomain>,
}

fn domain_index_check(sol: &RadialSolution, i: usize) -> Result<()> {
    if i == 0 || i > sol.k + 1 {
        return Err(Error::InvalidInput(format!(
            "domain index must lie in 1..={}, got {i}",
            sol.k + 1
        )));
    }
    Ok(())
}

/// Splits the solution into its k + 1 nodal domains.
pub fn decompose(sol: &RadialSolution) -> Result<Vec<NodalDomain>> {
    sol.validate()?;
    let traj = &sol.trajectory;
    let mut out = Vec::with_capacity(sol.k + 1);
    for (i, zero) in traj.zeros.iter().enumerate() {
        let end = traj.segment_end(i);
        let (d0, n0, p0, m0) = if i == 0 {
            (0.0, 0.0, 0.0, 0.0)
        } else {
            let s = traj.segment_start(i);
            (s.dirichlet(), s.nehari(), s.potential(), s.mass())
        };
        let (peak_value, log_peak_radius) = if i == 0 {
            (sol.amplitude, f64::NEG_INFINITY)
        } else {
            let p = &traj.peaks[i - 1];
            (p.value, p.log_radius.to_f64())
        };
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        out.push(NodalDomain {
            index: i + 1,
            inner_radius: if i == 0 { 0.0 } else { traj.zeros[i - 1].radius() },
            outer_radius: zero.radius(),
            log_outer_radius: zero.log_radius.to_f64(),
            peak_radius: log_peak_radius.exp(),
            log_peak_radius,
            peak_value,
            sign,
            dirichlet: end.dirichlet() - d0,
            nehari: end.nehari() - n0,
            potential: end.potential() - p0,
            // The mass channel accumulates λ f(u) r, which changes sign with u.
            mass: sign * (end.mass() - m0),
            outer_slope: zero.slope(),
            log_abs_outer_slope: zero.log_abs_slope(),
            outer_flux: zero.w,
        });
    }
    Ok(out)
}

pub fn energy(sol: &RadialSolution) -> Result<EnergyReport> {
    let per_domain = decompose(sol)?;
    let d: f64 = per_domain.iter().map(|d| d.dirichlet).sum();
    let p: f64 = per_domain.iter().map(|d| d.potential).sum();
    Ok(EnergyReport {
        full_dirichlet: 2.0 * PI * d,
        functional: PI * d - 2.0 * PI * p,
        per_domain,
    })
}

/// |Σ dirichlet − Σ nehari| / Σ dirichlet.
pub fn nehari_residual(sol: &RadialSolution) -> Result<f64> {
    let domains = decompose(sol)?;
    let d: f64 = domains.iter().map(|d| d.dirichlet).sum();
    let n: f64 = domains.iter().map(|d| d.nehari).sum();
    if !(d > 0.0) {
        return Err(Error::InvalidTrajectory("zero Dirichlet energy".into()));
    }
    Ok((d - n).abs() / d)
}

/// Largest per-domain |dirichlet − nehari| / dirichlet.
pub fn domain_nehari_residual(sol: &RadialSolution) -> Result<f64> {
    Ok(decompose(sol)?
        .iter()
        .map(|d| (d.dirichlet - d.nehari).abs() / d.dirichlet)
        .fold(0.0, f64::max))
}

/// μ_i·r_i·|u′(r_i)|.
pub fn boundary_flux(sol: &RadialSolution, i: usize) -> Result<f64> {
    domain_index_check(sol, i)?;
    let peak = sol.peaks()[i - 1];
    Ok(peak * sol.trajectory.zeros[i - 1].w.abs())
}

/// ln(λ r² |f(c·u)|) at a sample; c = 1 uses the frame's exact exponent.
fn log_forcing_scaled(sol: &RadialSolution, s: &Sample, scale: f64) -> f64 {
    let nl = sol.trajectory.nonlinearity();
    if scale == 1.0 {
        return s.frame.log_forcing(&nl, s.tau, s.v());
    }
    let a = (scale * s.u()).abs();
    if a == 0.0 {
        return f64::NEG_INFINITY;
    }
    a.ln() + a * a + nl.perturbation(a) + sol.params.log_lambda() + 2.0 * s.log_radius().to_f64()
}

/// Log-radius span of domain i: (start of integration, peak, outer zero).
fn domain_log_span(sol: &RadialSolution, i: usize) -> (DoubleDouble, DoubleDouble, DoubleDouble) {
    let traj = &sol.trajectory;
    let outer = traj.zeros[i - 1].log_radius;
    if i == 1 {
        let start = traj.start_log_radius();
        (start, start, outer)
    } else {
        (traj.zeros[i - 2].log_radius, traj.peaks[i - 2].log_radius, outer)
    }
}

fn identity_residual_impl(sol: &RadialSolution, i: usize, scale: f64) -> Result<f64> {
    domain_index_check(sol, i)?;
    sol.validate()?;
    let traj = &sol.trajectory;
    let (inner, peak, outer) = domain_log_span(sol, i);
    let mu = scale * sol.peaks()[i - 1];
    let weight = |s: &Sample, anchor: DoubleDouble| (s.log_radius() - anchor).to_f64();

    let mut outer_integral = traj.integrate_log(peak, outer, |s| {
        log_forcing_scaled(sol, s, scale).exp() * (-weight(s, outer))
    })?;
    if i == 1 {
        // ∫₀^{r₀} λ f(s) r ln(r₁/r) dr with the leading series term λ f(u(0)).
        let start = traj.start_sample();
        let g = (log_forcing_scaled(sol, &start, scale)).exp();
        outer_integral += 0.5 * g * ((outer - start.log_radius()).to_f64() + 0.5);
    }
    let mut residual = (mu - outer_integral).abs() / mu;
    if i >= 2 {
        let inner_integral = traj.integrate_log(inner, peak, |s| {
            log_forcing_scaled(sol, s, scale).exp() * weight(s, inner)
        })?;
        residual = residual.max((mu - inner_integral).abs() / mu);
    }
    Ok(residual)
}

/// Relative residual of μ_i = ∫_{ρ_i}^{r_i} λ |f(u)| r ln(r_i/r) dr and, for
/// i ≥ 2, of μ_i = ∫_{r_{i−1}}^{ρ_i} λ |f(u)| r ln(r/r_{i−1}) dr.
pub fn identity_residual(sol: &RadialSolution, i: usize) -> Result<f64> {
    identity_residual_impl(sol, i, 1.0)
}

/// [`identity_residual`] evaluated on the pointwise multiple `scale·u` of
/// the solution; a sensitivity probe, since c·u is not a solution for c ≠ 1.
pub fn identity_residual_scaled(sol: &RadialSolution, i: usize, scale: f64) -> Result<f64> {
    identity_residual_impl(sol, i, scale)
}

pub fn identity_residual_max(sol: &RadialSolution) -> Result<f64> {
    (1..=sol.k + 1).try_fold(0.0f64, |acc, i| Ok(acc.max(identity_residual(sol, i)?)))
}

/// max over domains of |r_i u′(r_i) + ∫_{ρ_i}^{r_i} λ f(u) r dr| / |r_i u′(r_i)|,
/// with the integral re-evaluated by quadrature of the dense output.
pub fn first_integral_residual(sol: &RadialSolution) -> Result<f64> {
    sol.validate()?;
    let traj = &sol.trajectory;
    let mut worst = 0.0f64;
    for i in 1..=sol.k + 1 {
        let (_, peak, outer) = domain_log_span(sol, i);
        let mut integral = traj.integrate_log(peak, outer, |s| {
            let lf = log_forcing_scaled(sol, s, 1.0).exp();
            s.u().signum() * lf
        })?;
        if i == 1 {
            integral += traj.start_sample().mass();
        }
        let w = traj.zeros[i - 1].w;
        worst = worst.max((w + integral).abs() / w.abs());
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SturmCheck {
    pub bound: f64,
    /// Zeros of v = r·u on the transformed interval, which is k.
    pub zero_count: usize,
    pub holds: bool,
}

/// Sturm-type bound k < ½((b − a)∫_a^b q⁺)^{1/2} + 1 after the change of
/// variables ξ = 1/(1 − ln r), v(ξ) = ξ·u, applied on [r_1, 1].
///
/// With t = ln r, dξ = dt/(1 − t)² and q(ξ) = r²(1 − t)⁴ λ f(u)/u, so
/// ∫ q dξ = ∫ λ r² (f(u)/u) (1 − t)² dt with f(u)/u = e^{u² + α|u|^β} > 0.
pub fn sturm_bound_check(sol: &RadialSolution) -> Result<SturmCheck> {
    if sol.k == 0 {
        return Err(Error::InvalidInput("the zero bound needs k >= 1".into()));
    }
    sol.validate()?;
    let traj = &sol.trajectory;
    let nl = traj.nonlinearity();
    let t1 = traj.zeros[0].log_radius;
    let end = traj.zeros[sol.k].log_radius;
    let integral = traj.integrate_log(t1, end, |s| {
        let t = s.log_radius().to_f64();
        let q = s.frame.exponent(&nl, s.tau, s.v());
        q.exp() * (1.0 - t) * (1.0 - t)
    })?;
    let a = 1.0 / (1.0 - t1.to_f64());
    let bound = 0.5 * ((1.0 - a) * integral).sqrt() + 1.0;
    Ok(SturmCheck {
        bound,
        zero_count: sol.k,
        holds: (sol.k as f64) < bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bessel;
    use crate::scalar::ProblemParams;
    use crate::solve::{nodal_solution, solution_from_amplitude, SolverOptions};

    fn solution(k: usize, beta: f64, lambda: f64) -> RadialSolution {
        let target = ProblemParams::new(1.0, beta, lambda).unwrap();
        nodal_solution(k, &target, &SolverOptions::default()).unwrap()
    }

    #[test]
    fn single_domain_structure() {
        let sol = solution(0, 1.2, 0.1);
        let d = decompose(&sol).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].peak_radius, 0.0);
        assert_eq!(d[0].peak_value, sol.amplitude);
        assert!(d[0].dirichlet > 0.0);
        assert!((d[0].outer_radius - 1.0).abs() < 1e-12);
    }

    #[test]
    fn telescoping_and_signs() {
        let sol = solution(2, 1.3, 5.0);
        let d = decompose(&sol).unwrap();
        assert_eq!(d.iter().map(|x| x.sign).collect::<Vec<_>>(), vec![1.0, -1.0, 1.0]);
        let total: f64 = d.iter().map(|x| x.dirichlet).sum();
        let end = sol.trajectory.end_sample().dirichlet();
        assert!((total - end).abs() <= 1e-12 * end);
        for x in &d {
            assert!(x.mass > 0.0 && x.potential > 0.0);
            assert!((x.dirichlet - x.nehari).abs() <= 1e-8 * x.dirichlet);
        }
    }

    #[test]
    fn identities_hold_on_solutions() {
        for (k, beta, lambda) in [(0, 1.0, 1e-2), (1, 1.2, 1e-1), (2, 1.5, 2.0)] {
            let sol = solution(k, beta, lambda);
            assert!(nehari_residual(&sol).unwrap() <= 1e-8);
            assert!(identity_residual_max(&sol).unwrap() <= 1e-6, "k = {k}");
            assert!(first_integral_residual(&sol).unwrap() <= 1e-8);
            let e = energy(&sol).unwrap();
            assert!(e.full_dirichlet > 0.0 && e.functional < 0.5 * e.full_dirichlet);
        }
    }

    #[test]
    fn perturbed_profile_violates_identity() {
        let sol = solution(1, 1.5, 10.0);
        for i in 1..=2 {
            assert!(identity_residual_scaled(&sol, i, 1.01).unwrap() > 1e-3);
        }
        assert!(identity_residual(&sol, 3).is_err());
        assert!(identity_residual(&sol, 0).is_err());
    }

    #[test]
    fn flux_near_linear_regime_matches_bessel() {
        // u ≈ s·J₀(t₁ r), so μ·r·|u′(1)| ≈ s²·t₁·|J₀′(t₁)| = s²·t₁·J₁(t₁).
        let target = ProblemParams::new(1.0, 1.2, 1.0).unwrap();
        let s = 1e-6;
        let sol = solution_from_amplitude(s, 0, &target, &SolverOptions::default()).unwrap();
        let t1 = bessel::j0_zero(1).unwrap().t_k;
        let h = 1e-5;
        let dj0 = (bessel::j0(t1 + h) - bessel::j0(t1 - h)) / (2.0 * h);
        let expected = s * s * t1 * dj0.abs();
        let flux = boundary_flux(&sol, 1).unwrap();
        assert!((flux - expected).abs() < 1e-5 * expected, "{flux} vs {expected}");
    }

    #[test]
    fn sturm_bound_on_nodal_solutions() {
        assert!(sturm_bound_check(&solution(0, 1.2, 0.1)).is_err());
        for k in 1..=3 {
            let check = sturm_bound_check(&solution(k, 1.5, 10.0)).unwrap();
            assert!(check.holds, "k = {k}: {check:?}");
            assert!(check.bound > 1.0);
        }
    }
}
