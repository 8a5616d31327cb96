//! Shooting on the central amplitude.
//!
//! At λ = 1 the trajectory from u(0) = s has zeros z_1(s) < z_2(s) < …; the
//! dilation x ↦ z_{k+1} x turns it into a solution on the unit disk with
//! exactly k interior zeros and λ = z_{k+1}(s)². Prescribing λ therefore
//! means solving ln z_{k+1}(s)² = ln λ for s.

use rayon::prelude::*;
use serde::Serialize;

use crate::ode::{integrate_radial, IntegrateOptions, StopRule, Trajectory, ZeroEvent};
use crate::scalar::{DoubleDouble, Nonlinearity, Precision, ProblemParams, EXPONENT_BUDGET};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub integrate: IntegrateOptions,
    /// Log-spaced amplitudes probed when bracketing.
    pub scan_points: usize,
    pub s_min: f64,
    /// Largest amplitude scanned; `None` picks the backend limit.
    pub s_max: Option<f64>,
    /// Required |ln λ(s) − ln λ_target|.
    pub log_lambda_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            integrate: IntegrateOptions::default(),
            scan_points: 200,
            s_min: 1e-6,
            s_max: None,
            log_lambda_tol: 1e-10,
        }
    }
}

/// Ceiling for amplitudes when the extended backend is available.
pub const EXTENDED_S_MAX: f64 = 1e6;

impl SolverOptions {
    pub fn with_precision(precision: Precision) -> Self {
        let mut o = Self::default();
        o.integrate.precision = precision;
        o
    }

    /// Upper end of the amplitude scan.
    pub fn amplitude_limit(&self, nl: &Nonlinearity) -> f64 {
        if let Some(s) = self.s_max {
            return s;
        }
        match self.integrate.precision {
            Precision::Double => budget_amplitude(nl),
            _ => EXTENDED_S_MAX,
        }
    }
}

/// Largest s with s² + α s^β + ln s ≤ the exponent budget.
pub fn budget_amplitude(nl: &Nonlinearity) -> f64 {
    let over = |s: f64| nl.log_abs_f_unscaled(s) - EXPONENT_BUDGET;
    let (mut lo, mut hi) = (1.0, EXPONENT_BUDGET.sqrt());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if over(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

fn unit_params(alpha: f64, beta: f64) -> Result<ProblemParams> {
    ProblemParams::new(alpha, beta, 1.0)
}

/// Trajectory at λ = 1 from u(0) = s, run to its (k+1)-th zero.
pub fn solve_unit_lambda(s: f64, k: usize, alpha: f64, beta: f64, opts: &SolverOptions) -> Result<Trajectory> {
    let p = unit_params(alpha, beta)?;
    integrate_radial(s, &p, StopRule::AfterZeros(k + 1), &opts.integrate)
}

/// ln λ(s) = 2 ln z_{k+1}(s).
pub fn log_lambda_of_s(s: f64, k: usize, alpha: f64, beta: f64, opts: &SolverOptions) -> Result<f64> {
    let traj = solve_unit_lambda(s, k, alpha, beta, opts)?;
    Ok(2.0 * traj.zeros[k].log_radius.to_f64())
}

/// λ(s) = z_{k+1}(s)²; underflows to 0 for very large s, use
/// [`log_lambda_of_s`] there.
pub fn lambda_of_s(s: f64, k: usize, alpha: f64, beta: f64, opts: &SolverOptions) -> Result<f64> {
    log_lambda_of_s(s, k, alpha, beta, opts).map(f64::exp)
}

/// A radial solution on the unit disk with exactly k interior zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialSolution {
    pub k: usize,
    /// Parameters with the achieved λ.
    pub params: ProblemParams,
    pub target_lambda: f64,
    /// u(0).
    pub amplitude: f64,
    /// Trajectory on the unit disk; its last zero sits at r = 1.
    pub trajectory: Trajectory,
}

/// Per-domain summary of a [`RadialSolution`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DomainSummary {
    /// 1-based domain index.
    pub index: usize,
    /// max |u| on the domain (u(0) for the first).
    pub peak: f64,
    pub log_peak_radius: f64,
    /// Outer zero of the domain.
    pub log_zero_radius: f64,
    /// u′ at the outer zero.
    pub slope: f64,
    pub log_abs_slope: f64,
}

impl RadialSolution {
    /// Zeros r_1 < … < r_{k+1} = 1.
    pub fn zeros(&self) -> &[ZeroEvent] {
        &self.trajectory.zeros
    }

    pub fn interior_zero_radii(&self) -> Vec<f64> {
        self.zeros()[..self.k].iter().map(|z| z.radius()).collect()
    }

    /// μ_1 = u(0), μ_i = max over the i-th domain of |u|.
    pub fn peaks(&self) -> Vec<f64> {
        std::iter::once(self.amplitude)
            .chain(self.trajectory.peaks.iter().map(|p| p.value))
            .collect()
    }

    pub fn domains(&self) -> Vec<DomainSummary> {
        self.zeros()
            .iter()
            .enumerate()
            .map(|(i, z)| {
                let (peak, log_peak_radius) = if i == 0 {
                    (self.amplitude, f64::NEG_INFINITY)
                } else {
                    let pk = self.trajectory.peaks.get(i - 1);
                    (
                        pk.map_or(f64::NAN, |p| p.value),
                        pk.map_or(f64::NAN, |p| p.log_radius.to_f64()),
                    )
                };
                DomainSummary {
                    index: i + 1,
                    peak,
                    log_peak_radius,
                    log_zero_radius: z.log_radius.to_f64(),
                    slope: z.slope(),
                    log_abs_slope: z.log_abs_slope(),
                }
            })
            .collect()
    }

    /// |ln λ_achieved − ln λ_target|.
    pub fn lambda_residual(&self) -> f64 {
        (self.params.log_lambda() - self.target_lambda.ln()).abs()
    }

    /// Checks the defining properties: k + 1 zeros with the last on r = 1,
    /// alternating slopes, one peak per outer domain.
    pub fn validate(&self) -> Result<()> {
        let zeros = self.zeros();
        if zeros.len() != self.k + 1 {
            return Err(Error::InvalidTrajectory(format!(
                "{} zeros for k = {}",
                zeros.len(),
                self.k
            )));
        }
        let last = zeros[self.k].log_radius.to_f64();
        if last.abs() > 1e-12 {
            return Err(Error::InvalidTrajectory(format!("outer zero at log-radius {last:e}")));
        }
        for (i, z) in zeros.iter().enumerate() {
            let expected = if i % 2 == 0 { -1.0 } else { 1.0 };
            if z.w.signum() != expected {
                return Err(Error::InvalidTrajectory(format!("slope sign at zero {}", i + 1)));
            }
        }
        if self.trajectory.peaks.len() != self.k {
            return Err(Error::InvalidTrajectory(format!(
                "{} interior peaks for k = {}",
                self.trajectory.peaks.len(),
                self.k
            )));
        }
        Ok(())
    }
}

/// Brent's method on a bracketed sign change of `f`.
fn brent<F: FnMut(f64) -> Result<f64>>(
    mut f: F,
    mut a: f64,
    mut b: f64,
    mut fa: f64,
    mut fb: f64,
    ftol: f64,
    xtol: f64,
) -> Result<f64> {
    if fa * fb > 0.0 {
        return Err(Error::NoSignChange { lo: a, hi: b });
    }
    if fa.abs() < fb.abs() {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut mflag = true;
    for _ in 0..200 {
        if fb.abs() <= ftol || (b - a).abs() <= xtol {
            return Ok(b);
        }
        let mut x = if fa != fc && fb != fc {
            a * fb * fc / ((fa - fb) * (fa - fc))
                + b * fa * fc / ((fb - fa) * (fb - fc))
                + c * fa * fb / ((fc - fa) * (fc - fb))
        } else {
            b - fb * (b - a) / (fb - fa)
        };
        let q = (3.0 * a + b) / 4.0;
        let outside = !((x > q.min(b)) && (x < q.max(b)));
        let slow = if mflag {
            (x - b).abs() >= 0.5 * (b - c).abs() || (b - c).abs() < xtol
        } else {
            (x - b).abs() >= 0.5 * (c - d).abs() || (c - d).abs() < xtol
        };
        if outside || slow {
            x = 0.5 * (a + b);
            mflag = true;
        } else {
            mflag = false;
        }
        let fx = f(x)?;
        d = c;
        c = b;
        fc = fb;
        if fa * fx < 0.0 {
            b = x;
            fb = fx;
        } else {
            a = x;
            fa = fx;
        }
        if fa.abs() < fb.abs() {
            std::mem::swap(&mut a, &mut b);
            std::mem::swap(&mut fa, &mut fb);
        }
    }
    Ok(b)
}

/// ln λ(s) sampled on the scan grid; failed shots are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaScan {
    pub log_s: Vec<f64>,
    pub log_lambda: Vec<Option<f64>>,
}

impl LambdaScan {
    /// Smallest and largest λ seen.
    pub fn lambda_range(&self) -> (f64, f64) {
        let vals = self.log_lambda.iter().flatten();
        let lo = vals.clone().fold(f64::INFINITY, |a, &b| a.min(b));
        let hi = vals.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        (lo.exp(), hi.exp())
    }

    /// Grid intervals across which ln λ − target changes sign.
    pub fn brackets(&self, target_log: f64) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut prev: Option<(usize, f64)> = None;
        for (i, v) in self.log_lambda.iter().enumerate() {
            let Some(v) = v else { continue };
            let g = v - target_log;
            if let Some((j, gp)) = prev {
                if gp == 0.0 || gp * g < 0.0 {
                    out.push((j, i));
                }
            }
            prev = Some((i, g));
        }
        if let Some((j, g)) = prev {
            if g == 0.0 {
                out.push((j, j));
            }
        }
        out
    }
}

/// Evaluates ln λ(s) on log-spaced amplitudes, in parallel.
pub fn scan_lambda(k: usize, alpha: f64, beta: f64, opts: &SolverOptions) -> Result<LambdaScan> {
    let nl = Nonlinearity::new(alpha, beta)?;
    let n = opts.scan_points.max(2);
    let (a, b) = (opts.s_min.ln(), opts.amplitude_limit(&nl).ln());
    if !(a < b) {
        return Err(Error::InvalidInput(format!(
            "empty amplitude range [{:e}, {:e}]",
            opts.s_min,
            opts.amplitude_limit(&nl)
        )));
    }
    let log_s: Vec<f64> = (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect();
    let log_lambda = log_s
        .par_iter()
        .map(|&ls| log_lambda_of_s(ls.exp(), k, alpha, beta, opts).ok())
        .collect();
    Ok(LambdaScan { log_s, log_lambda })
}

fn polish(
    k: usize,
    target: &ProblemParams,
    lo: f64,
    hi: f64,
    opts: &SolverOptions,
) -> Result<f64> {
    let (alpha, beta) = (target.alpha(), target.beta());
    let goal = target.log_lambda();
    let g = |ls: f64| log_lambda_of_s(ls.exp(), k, alpha, beta, opts).map(|v| v - goal);
    let (glo, ghi) = (g(lo)?, g(hi)?);
    let root = brent(g, lo, hi, glo, ghi, opts.log_lambda_tol, 1e-15 * lo.abs().max(1.0))?;
    Ok(root.exp())
}

/// Shoots from `s` and rescales onto the unit disk.
pub fn solution_from_amplitude(
    s: f64,
    k: usize,
    target: &ProblemParams,
    opts: &SolverOptions,
) -> Result<RadialSolution> {
    let p = unit_params(target.alpha(), target.beta())?;
    let integrate = IntegrateOptions {
        with_potential: true,
        ..opts.integrate
    };
    let traj = integrate_radial(s, &p, StopRule::AfterZeros(k + 1), &integrate)?;
    let shift: DoubleDouble = traj.zeros[k].log_radius;
    let trajectory = traj.rescaled(shift)?;
    let sol = RadialSolution {
        k,
        params: trajectory.params,
        target_lambda: target.lambda(),
        amplitude: s,
        trajectory,
    };
    sol.validate()?;
    Ok(sol)
}

/// Every solution branch with k interior zeros at the given λ, ordered by
/// increasing amplitude.
pub fn nodal_solutions(k: usize, target: &ProblemParams, opts: &SolverOptions) -> Result<Vec<RadialSolution>> {
    let scan = scan_lambda(k, target.alpha(), target.beta(), opts)?;
    let goal = target.log_lambda();
    let brackets = scan.brackets(goal);
    if brackets.is_empty() {
        let (lambda_min, lambda_max) = scan.lambda_range();
        return Err(Error::NoSolutionInRange {
            k,
            target: target.lambda(),
            lambda_min,
            lambda_max,
        });
    }
    let mut out = Vec::with_capacity(brackets.len());
    let mut last_err = None;
    for (i, j) in brackets {
        let s = if i == j {
            Ok(scan.log_s[i].exp())
        } else {
            polish(k, target, scan.log_s[i], scan.log_s[j], opts)
        };
        match s.and_then(|s| solution_from_amplitude(s, k, target, opts)) {
            Ok(sol) => out.push(sol),
            Err(e) => last_err = Some(e),
        }
    }
    if out.is_empty() {
        return Err(last_err.unwrap_or(Error::FamilyEmpty));
    }
    Ok(out)
}

/// The largest-amplitude solution with k interior zeros at the given λ.
pub fn nodal_solution(k: usize, target: &ProblemParams, opts: &SolverOptions) -> Result<RadialSolution> {
    let mut all = nodal_solutions(k, target, opts)?;
    Ok(all.pop().expect("nodal_solutions returns at least one"))
}

/// Continuation: the solution whose amplitude is closest to `seed`, found by
/// widening a bracket around it before falling back to a full scan.
pub fn nodal_solution_near(
    k: usize,
    target: &ProblemParams,
    seed: f64,
    opts: &SolverOptions,
) -> Result<RadialSolution> {
    let (alpha, beta) = (target.alpha(), target.beta());
    let goal = target.log_lambda();
    let nl = target.nonlinearity();
    let (ls_min, ls_max) = (opts.s_min.ln(), opts.amplitude_limit(&nl).ln());
    let center = seed.ln().clamp(ls_min, ls_max);
    let g = |ls: f64| log_lambda_of_s(ls.exp(), k, alpha, beta, opts).map(|v| v - goal);
    if let Ok(g0) = g(center) {
        if g0.abs() <= opts.log_lambda_tol {
            return solution_from_amplitude(center.exp(), k, target, opts);
        }
        let mut width = 0.02;
        let (mut lo, mut hi) = ((center, g0), (center, g0));
        while width < 4.0 {
            let next_lo = (center - width).max(ls_min);
            let next_hi = (center + width).min(ls_max);
            let glo = g(next_lo);
            let ghi = g(next_hi);
            let mut found = None;
            if let Ok(v) = glo {
                if v * lo.1 <= 0.0 {
                    found = Some(((next_lo, v), lo));
                }
                lo = (next_lo, v);
            }
            if let Ok(v) = ghi {
                if found.is_none() && v * hi.1 <= 0.0 {
                    found = Some((hi, (next_hi, v)));
                }
                hi = (next_hi, v);
            }
            if let Some(((a, ga), (b, gb))) = found {
                let root = brent(&g, a, b, ga, gb, opts.log_lambda_tol, 1e-15 * a.abs().max(1.0))?;
                return solution_from_amplitude(root.exp(), k, target, opts);
            }
            width *= 2.0;
        }
    }
    let all = nodal_solutions(k, target, opts)?;
    all.into_iter()
        .min_by(|a, b| {
            let da = (a.amplitude.ln() - seed.ln()).abs();
            let db = (b.amplitude.ln() - seed.ln()).abs();
            da.total_cmp(&db)
        })
        .ok_or(Error::FamilyEmpty)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bessel;

    #[test]
    fn small_amplitude_tends_to_eigenvalue() {
        let opts = SolverOptions::default();
        for k in 0..3 {
            let lam = lambda_of_s(1e-7, k, 1.0, 1.2, &opts).unwrap();
            let eig = bessel::j0_zero(k + 1).unwrap().lambda_k;
            assert!((lam - eig).abs() < 1e-5 * eig, "k = {k}: {lam} vs {eig}");
        }
    }

    #[test]
    fn brent_finds_cubic_root() {
        let f = |x: f64| Ok(x * x * x - 2.0);
        let r = brent(f, 0.0, 2.0, -2.0, 6.0, 1e-14, 1e-15).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-13);
        assert!(brent(f, 2.0, 3.0, 6.0, 25.0, 1e-14, 1e-15).is_err());
    }

    #[test]
    fn budget_amplitude_is_on_the_budget() {
        let nl = Nonlinearity::new(1.0, 1.2).unwrap();
        let s = budget_amplitude(&nl);
        assert!((nl.log_abs_f_unscaled(s) - EXPONENT_BUDGET).abs() < 1e-9);
    }

    #[test]
    fn ground_state_hits_target_lambda() {
        let target = ProblemParams::new(1.0, 1.0, 0.5).unwrap();
        let sol = nodal_solution(0, &target, &SolverOptions::default()).unwrap();
        assert!(sol.lambda_residual() < 1e-10);
        assert!((sol.params.lambda() - 0.5).abs() < 1e-9);
        sol.validate().unwrap();
        assert!(sol.interior_zero_radii().is_empty());
        assert_eq!(sol.peaks(), vec![sol.amplitude]);
    }

    #[test]
    fn nodal_solution_has_k_interior_zeros() {
        let target = ProblemParams::new(1.0, 1.3, 5.0).unwrap();
        let sol = nodal_solution(2, &target, &SolverOptions::default()).unwrap();
        let zeros = sol.interior_zero_radii();
        assert_eq!(zeros.len(), 2);
        assert!(zeros[0] < zeros[1] && zeros[1] < 1.0);
        assert_eq!(sol.peaks().len(), 3);
    }

    #[test]
    fn lambda_outside_reach_is_reported() {
        let target = ProblemParams::new(1.0, 1.2, 1e3).unwrap();
        let err = nodal_solution(0, &target, &SolverOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NoSolutionInRange { k: 0, .. }));
    }

    #[test]
    fn continuation_returns_the_nearby_branch() {
        let target = ProblemParams::new(1.0, 1.0, 1.0).unwrap();
        let opts = SolverOptions::default();
        let sol = nodal_solution(0, &target, &opts).unwrap();
        let near = nodal_solution_near(0, &target, sol.amplitude * 1.01, &opts).unwrap();
        assert!((near.amplitude - sol.amplitude).abs() < 1e-8 * sol.amplitude);
    }
}
