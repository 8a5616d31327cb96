//! Shooting integrator for the radial equation −u″ − u′/r = λ f(u).
//!
//! The independent variable is the log-radius t = ln r. With w = r·u′ the
//! system becomes
//!
//! ```text
//!     u_t = w,     w_t = −λ r² f(u),
//! ```
//!
//! which has no singular coefficient and keeps every length scale of a
//! concentrating solution at O(1) step sizes. Running integrals are carried
//! along as extra components (all measured with the r dr weight):
//!
//! | component | integrand in t                   | meaning            |
//! |-----------|----------------------------------|--------------------|
//! | dirichlet | w²                               | ∫ u′² r dr         |
//! | nehari    | λ r² u f(u)                      | ∫ λ u f(u) r dr    |
//! | mass      | λ r² f(u)                        | ∫ λ f(u) r dr      |
//! | potential | λ r² F(u)                        | ∫ λ F(u) r dr      |
//!
//! Each nodal domain is integrated in its own [`Frame`], which stores the
//! log-radius origin in double-double and, in the extended backend, shifts u
//! by the central amplitude so that u² + 2 ln r + ln λ is formed without
//! cancellation even when u² ~ 10¹⁰.

use serde::Serialize;

use crate::scalar::{DoubleDouble, Nonlinearity, Precision, ProblemParams};
use crate::{Error, Result};

pub const DIM: usize = 6;
const V: usize = 0;
const W: usize = 1;
const DIRICHLET: usize = 2;
const NEHARI: usize = 3;
const MASS: usize = 4;
const POTENTIAL: usize = 5;
/// Components under error control; the potential channel rides along.
const CONTROLLED: usize = 5;

pub type State = [f64; DIM];

/// Integrator tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub min_step: f64,
    pub max_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rtol: 1e-12,
            atol: 1e-14,
            min_step: 1e-15,
            max_steps: 200_000,
        }
    }
}

impl Tolerances {
    pub fn halved(&self) -> Self {
        Self {
            rtol: 0.5 * self.rtol,
            atol: 0.5 * self.atol,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// Stop at the n-th zero of u (n ≥ 1).
    AfterZeros(usize),
    /// Stop at radius R.
    AtRadius(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateOptions {
    pub tolerances: Tolerances,
    pub precision: Precision,
    /// Integrate the ∫ λ F(u) r dr channel (one small quadrature per evaluation).
    pub with_potential: bool,
    /// Integration is abandoned past this radius.
    pub radius_cap: f64,
    /// The series start sits at `start_factor · min(1, γ)`, with γ the bubble scale at the origin.
    pub start_factor: f64,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            tolerances: Tolerances::default(),
            precision: Precision::Auto,
            with_potential: false,
            radius_cap: 1e6,
            start_factor: 1e-6,
        }
    }
}

/// Coordinates of one nodal domain: t = t_base + τ and u = u_base + v.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Frame {
    pub t_base: DoubleDouble,
    pub u_base: f64,
    /// α·u_base^β.
    pub perturbation_base: f64,
    /// u_base² + α·u_base^β + 2·t_base + ln λ.
    pub c0: DoubleDouble,
}

impl Frame {
    fn new(nl: &Nonlinearity, t_base: DoubleDouble, u_base: f64, log_lambda: f64) -> Self {
        let perturbation_base = nl.perturbation(u_base.abs());
        let c0 = (DoubleDouble::square(u_base) + t_base.scale(2.0))
            .add_f64(perturbation_base)
            .add_f64(log_lambda);
        Self {
            t_base,
            u_base,
            perturbation_base,
            c0,
        }
    }

    #[inline]
    pub fn u(&self, v: f64) -> f64 {
        self.u_base + v
    }

    pub fn log_radius(&self, tau: f64) -> DoubleDouble {
        self.t_base.add_f64(tau)
    }

    /// τ of an absolute log-radius.
    pub fn tau_of(&self, t: DoubleDouble) -> f64 {
        (t - self.t_base).to_f64()
    }

    /// α|u|^β − α·u_base^β without cancellation near u = u_base.
    #[inline]
    fn perturbation_increment(&self, nl: &Nonlinearity, v: f64) -> f64 {
        if self.u_base == 0.0 {
            return nl.perturbation(v.abs());
        }
        let a = self.u_base + v;
        if a > 0.0 {
            self.perturbation_base * (nl.beta() * (v / self.u_base).ln_1p()).exp_m1()
        } else {
            nl.perturbation(a.abs()) - self.perturbation_base
        }
    }

    /// u² + α|u|^β + 2 ln r + ln λ at (τ, v), i.e. ln(λ r² f(u)/u).
    #[inline]
    pub fn exponent(&self, nl: &Nonlinearity, tau: f64, v: f64) -> f64 {
        self.c0
            .add_f64(2.0 * tau)
            .add_f64(v * (2.0 * self.u_base + v) + self.perturbation_increment(nl, v))
            .to_f64()
    }

    /// ln(λ r² |f(u)|); −∞ where u = 0.
    #[inline]
    pub fn log_forcing(&self, nl: &Nonlinearity, tau: f64, v: f64) -> f64 {
        let a = self.u(v).abs();
        if a == 0.0 {
            return f64::NEG_INFINITY;
        }
        a.ln() + self.exponent(nl, tau, v)
    }

    /// λ r² f(u), signed.
    #[inline]
    pub fn forcing(&self, nl: &Nonlinearity, tau: f64, v: f64) -> f64 {
        let u = self.u(v);
        if u == 0.0 {
            return 0.0;
        }
        u.signum() * self.log_forcing(nl, tau, v).exp()
    }
}

/// One accepted Dormand–Prince step with its continuous extension.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub tau: f64,
    pub h: f64,
    pub y0: State,
    pub y1: State,
    cont: [State; 4],
}

impl Step {
    /// Dense output at θ ∈ [0, 1].
    pub fn interp(&self, theta: f64) -> State {
        let th1 = 1.0 - theta;
        let [r2, r3, r4, r5] = &self.cont;
        let mut out = [0.0; DIM];
        for i in 0..DIM {
            out[i] = self.y0[i] + theta * (r2[i] + th1 * (r3[i] + theta * (r4[i] + th1 * r5[i])));
        }
        out
    }

    pub fn tau_end(&self) -> f64 {
        self.tau + self.h
    }
}

/// The part of a trajectory between consecutive zeros (or origin and first zero).
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub frame: Frame,
    /// Sign of u inside the domain.
    pub sign: f64,
    pub steps: Vec<Step>,
}

impl Segment {
    pub fn tau_start(&self) -> f64 {
        self.steps.first().map_or(0.0, |s| s.tau)
    }

    pub fn tau_end(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.tau_end())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZeroEvent {
    pub log_radius: DoubleDouble,
    /// r·u′(r) at the zero; invariant under dilation.
    pub w: f64,
    pub segment: usize,
}

impl ZeroEvent {
    pub fn radius(&self) -> f64 {
        self.log_radius.to_f64().exp()
    }

    /// u′ at the zero (may overflow to ±∞ for deeply concentrated domains).
    pub fn slope(&self) -> f64 {
        self.w * (-self.log_radius.to_f64()).exp()
    }

    pub fn log_abs_slope(&self) -> f64 {
        self.w.abs().ln() - self.log_radius.to_f64()
    }
}

/// Interior critical point of u.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeakEvent {
    pub log_radius: DoubleDouble,
    /// |u| at the critical point.
    pub value: f64,
    pub segment: usize,
}

impl PeakEvent {
    pub fn radius(&self) -> f64 {
        self.log_radius.to_f64().exp()
    }
}

/// Snapshot at an accepted step end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RadialState {
    pub log_r: f64,
    pub r: f64,
    pub u: f64,
    pub du: f64,
    pub w: f64,
    pub e_dirichlet: f64,
    pub e_potential: f64,
    pub e_nehari: f64,
    pub e_mass: f64,
}

/// A point on the dense trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub frame: Frame,
    pub tau: f64,
    pub state: State,
}

impl Sample {
    pub fn u(&self) -> f64 {
        self.frame.u(self.state[V])
    }

    /// u − u_base, exact even when u ≈ u_base ≫ 1.
    pub fn v(&self) -> f64 {
        self.state[V]
    }

    pub fn w(&self) -> f64 {
        self.state[W]
    }

    pub fn log_radius(&self) -> DoubleDouble {
        self.frame.log_radius(self.tau)
    }

    pub fn dirichlet(&self) -> f64 {
        self.state[DIRICHLET]
    }

    pub fn nehari(&self) -> f64 {
        self.state[NEHARI]
    }

    pub fn mass(&self) -> f64 {
        self.state[MASS]
    }

    pub fn potential(&self) -> f64 {
        self.state[POTENTIAL]
    }
}

/// Solution of the radial initial-value problem from u(0) = s, u′(0) = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub params: ProblemParams,
    pub initial_amplitude: f64,
    /// Backend actually used (never `Auto`).
    pub precision: Precision,
    pub with_potential: bool,
    pub segments: Vec<Segment>,
    pub zeros: Vec<ZeroEvent>,
    pub peaks: Vec<PeakEvent>,
}

impl Trajectory {
    pub fn nonlinearity(&self) -> Nonlinearity {
        self.params.nonlinearity()
    }

    /// Log-radius of the series start.
    pub fn start_log_radius(&self) -> DoubleDouble {
        let seg = &self.segments[0];
        seg.frame.log_radius(seg.tau_start())
    }

    pub fn end_log_radius(&self) -> DoubleDouble {
        let seg = self.segments.last().expect("trajectory has a segment");
        seg.frame.log_radius(seg.tau_end())
    }

    pub fn start_sample(&self) -> Sample {
        let seg = &self.segments[0];
        let step = &seg.steps[0];
        Sample {
            frame: seg.frame,
            tau: step.tau,
            state: step.y0,
        }
    }

    pub fn end_sample(&self) -> Sample {
        let seg = self.segments.last().expect("trajectory has a segment");
        let step = seg.steps.last().expect("segment has a step");
        Sample {
            frame: seg.frame,
            tau: step.tau_end(),
            state: step.y1,
        }
    }

    /// Sample at the start of segment `i` (a zero for i ≥ 1).
    pub fn segment_start(&self, i: usize) -> Sample {
        let seg = &self.segments[i];
        let step = &seg.steps[0];
        Sample {
            frame: seg.frame,
            tau: step.tau,
            state: step.y0,
        }
    }

    /// Sample at the end of segment `i`.
    pub fn segment_end(&self, i: usize) -> Sample {
        let seg = &self.segments[i];
        let step = seg.steps.last().expect("segment has a step");
        Sample {
            frame: seg.frame,
            tau: step.tau_end(),
            state: step.y1,
        }
    }

    /// Dense evaluation at log-radius `t`. Points inside the series start
    /// use the leading-order series; points past the end return `None`.
    pub fn sample(&self, t: DoubleDouble) -> Option<Sample> {
        let start = self.start_sample();
        let t_rel_start = (t - start.log_radius()).to_f64();
        if t_rel_start < 0.0 {
            // v and w both scale like r² near the origin.
            let ratio = (2.0 * t_rel_start).exp();
            let mut state = start.state;
            if start.frame.u_base == 0.0 {
                let s = self.initial_amplitude;
                state[V] = s + (start.state[V] - s) * ratio;
            } else {
                state[V] *= ratio;
            }
            state[W] *= ratio;
            for c in [DIRICHLET] {
                state[c] *= ratio * ratio;
            }
            for c in [NEHARI, MASS, POTENTIAL] {
                state[c] *= ratio;
            }
            return Some(Sample {
                frame: start.frame,
                tau: start.tau + t_rel_start,
                state,
            });
        }
        for seg in &self.segments {
            let tau = seg.frame.tau_of(t);
            if tau > seg.tau_end() {
                continue;
            }
            let tau = tau.max(seg.tau_start());
            let idx = seg.steps.partition_point(|s| s.tau_end() < tau);
            let step = &seg.steps[idx.min(seg.steps.len() - 1)];
            let theta = ((tau - step.tau) / step.h).clamp(0.0, 1.0);
            return Some(Sample {
                frame: seg.frame,
                tau,
                state: step.interp(theta),
            });
        }
        None
    }

    /// States at every accepted step end, in order.
    pub fn states(&self) -> Vec<RadialState> {
        let mut out = Vec::new();
        for seg in &self.segments {
            for step in &seg.steps {
                let log_r = seg.frame.log_radius(step.tau_end()).to_f64();
                let y = &step.y1;
                out.push(RadialState {
                    log_r,
                    r: log_r.exp(),
                    u: seg.frame.u(y[V]),
                    du: y[W] * (-log_r).exp(),
                    w: y[W],
                    e_dirichlet: y[DIRICHLET],
                    e_potential: y[POTENTIAL],
                    e_nehari: y[NEHARI],
                    e_mass: y[MASS],
                });
            }
        }
        out
    }

    /// max over accepted steps of |r u′(r) + ∫₀^r λ f(u) s ds|.
    pub fn first_integral_residual(&self) -> f64 {
        self.segments
            .iter()
            .flat_map(|seg| seg.steps.iter())
            .map(|st| (st.y1[W] + st.y1[MASS]).abs())
            .fold(0.0, f64::max)
    }

    /// The same solution seen on the ball of radius e^{−shift}·R: log radii
    /// move by −shift and λ picks up e^{2·shift}.
    pub fn rescaled(&self, shift: DoubleDouble) -> Result<Trajectory> {
        let log_lambda = self.params.log_lambda() + 2.0 * shift.to_f64();
        let params = self.params.with_log_lambda(log_lambda)?;
        let mut out = self.clone();
        out.params = params;
        for seg in &mut out.segments {
            seg.frame.t_base = seg.frame.t_base - shift;
        }
        for z in &mut out.zeros {
            z.log_radius = z.log_radius - shift;
        }
        for p in &mut out.peaks {
            p.log_radius = p.log_radius - shift;
        }
        Ok(out)
    }

    /// ∫ integrand dt over [t_from, t_to], applied to the dense output with
    /// one adaptive Gauss–Kronrod pass per overlapping step.
    pub fn integrate_log<F>(&self, t_from: DoubleDouble, t_to: DoubleDouble, mut integrand: F) -> Result<f64>
    where
        F: FnMut(&Sample) -> f64,
    {
        use crate::quad::{self, QuadOptions};
        let mut total = 0.0;
        let mut total_abs = 0.0;
        // Steps that miss the per-step tolerance are judged against the whole
        // integral at the end; a negligible piece may be noisy.
        let mut deferred: Option<Error> = None;
        let mut deferred_error = 0.0;
        let opts = QuadOptions {
            rel_tol: 1e-12,
            abs_tol: 1e-300,
            max_depth: 30,
            max_intervals: 500,
        };
        for seg in &self.segments {
            let lo = seg.frame.tau_of(t_from);
            let hi = seg.frame.tau_of(t_to);
            if hi <= seg.tau_start() || lo >= seg.tau_end() {
                continue;
            }
            for step in &seg.steps {
                let a = lo.max(step.tau);
                let b = hi.min(step.tau_end());
                if b <= a {
                    continue;
                }
                let r = quad::integrate(
                    |tau| {
                        let theta = ((tau - step.tau) / step.h).clamp(0.0, 1.0);
                        let sample = Sample {
                            frame: seg.frame,
                            tau,
                            state: step.interp(theta),
                        };
                        integrand(&sample)
                    },
                    a,
                    b,
                    opts,
                );
                match r {
                    Ok(r) => {
                        total += r.value;
                        total_abs += r.value.abs();
                    }
                    Err(e @ Error::QuadratureFailure { estimate, error, .. }) => {
                        total += estimate;
                        total_abs += estimate.abs();
                        deferred_error += error;
                        deferred.get_or_insert(e);
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        match deferred {
            Some(e) if !(deferred_error <= 1e-12 * total_abs) => Err(e),
            _ => Ok(total),
        }
    }
}

struct Rhs {
    nl: Nonlinearity,
    frame: Frame,
    potential: bool,
    /// min(1, s): absolute tolerances follow the size of the solution.
    amplitude: f64,
}

fn tol_scale_weight(component: usize, amplitude: f64) -> f64 {
    match component {
        DIRICHLET | NEHARI => amplitude * amplitude,
        _ => amplitude,
    }
}

impl Rhs {
    fn eval(&self, tau: f64, y: &State) -> Result<State> {
        let v = y[V];
        let w = y[W];
        let u = self.frame.u(v);
        let a = u.abs();
        let mut dy = [0.0; DIM];
        dy[V] = w;
        dy[DIRICHLET] = w * w;
        if a > 0.0 {
            let q = self.frame.exponent(&self.nl, tau, v);
            let force = u.signum() * (a.ln() + q).exp();
            dy[W] = -force;
            dy[NEHARI] = u * force;
            dy[MASS] = force;
            if self.potential && q.is_finite() && q > -745.0 - 40.0 {
                // Trial stages may wander far off the solution; a failed
                // quadrature there only has to reject the step.
                dy[POTENTIAL] = match self.nl.scaled_primitive(a) {
                    Ok(h) => (q + h.ln()).exp(),
                    Err(_) => f64::NAN,
                };
            }
        }
        Ok(dy)
    }
}

// Dormand–Prince 5(4) tableau with Hairer's continuous extension.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

struct Attempt {
    y1: State,
    k7: State,
    err: f64,
    cont: [State; 4],
}

fn combine(y: &State, h: f64, terms: &[(f64, &State)]) -> State {
    let mut out = *y;
    for i in 0..DIM {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        out[i] += h * acc;
    }
    out
}

fn attempt(rhs: &Rhs, tol: &Tolerances, tau: f64, y: &State, k1: &State, h: f64) -> Result<Attempt> {
    let k2 = rhs.eval(tau + C2 * h, &combine(y, h, &[(A21, k1)]))?;
    let k3 = rhs.eval(tau + C3 * h, &combine(y, h, &[(A31, k1), (A32, &k2)]))?;
    let k4 = rhs.eval(
        tau + C4 * h,
        &combine(y, h, &[(A41, k1), (A42, &k2), (A43, &k3)]),
    )?;
    let k5 = rhs.eval(
        tau + C5 * h,
        &combine(y, h, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
    )?;
    let k6 = rhs.eval(
        tau + h,
        &combine(y, h, &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
    )?;
    let y1 = combine(y, h, &[(A71, k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
    let k7 = rhs.eval(tau + h, &y1)?;

    let mut sum = 0.0;
    for i in 0..CONTROLLED {
        let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        let sc = tol.atol * tol_scale_weight(i, rhs.amplitude) + tol.rtol * y[i].abs().max(y1[i].abs());
        sum += (e / sc) * (e / sc);
    }
    let err = (sum / CONTROLLED as f64).sqrt();

    let mut cont = [[0.0; DIM]; 4];
    for i in 0..DIM {
        let ydiff = y1[i] - y[i];
        let bspl = h * k1[i] - ydiff;
        cont[0][i] = ydiff;
        cont[1][i] = bspl;
        cont[2][i] = ydiff - h * k7[i] - bspl;
        cont[3][i] = h
            * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
    }
    let finite = y1.iter().chain(k7.iter()).all(|x| x.is_finite());
    Ok(Attempt {
        y1,
        k7,
        err: if finite { err } else { f64::INFINITY },
        cont,
    })
}

/// Root of `g` on [0, 1] given g(0)·g(1) ≤ 0, by Illinois-modified regula falsi.
fn bracket_root<G: Fn(f64) -> f64>(g: G, mut lo: f64, mut hi: f64) -> f64 {
    let mut glo = g(lo);
    let mut ghi = g(hi);
    if glo == 0.0 {
        return lo;
    }
    if ghi == 0.0 {
        return hi;
    }
    let mut side = 0i8;
    for _ in 0..200 {
        if hi - lo <= 2.0 * f64::EPSILON * hi.abs().max(1e-300) {
            break;
        }
        let mut x = (lo * ghi - hi * glo) / (ghi - glo);
        if !(x > lo && x < hi) {
            x = 0.5 * (lo + hi);
        }
        let gx = g(x);
        if gx == 0.0 {
            return x;
        }
        if (gx < 0.0) == (glo < 0.0) {
            lo = x;
            glo = gx;
            if side == 1 {
                ghi *= 0.5;
            }
            side = 1;
        } else {
            hi = x;
            ghi = gx;
            if side == -1 {
                glo *= 0.5;
            }
            side = -1;
        }
    }
    if glo.abs() < ghi.abs() {
        lo
    } else {
        hi
    }
}

/// Polishes a zero of u inside a bracket of log-radii lying within one step
/// of the dense output. Returns the log-radius and u′ there.
pub fn refine_zero(traj: &Trajectory, bracket: (DoubleDouble, DoubleDouble)) -> Result<(DoubleDouble, f64)> {
    let (t_lo, t_hi) = bracket;
    let bad = || Error::NoSignChange {
        lo: t_lo.to_f64(),
        hi: t_hi.to_f64(),
    };
    let a = traj.sample(t_lo).ok_or_else(bad)?;
    let b = traj.sample(t_hi).ok_or_else(bad)?;
    if a.u() * b.u() >= 0.0 && !(a.u() == 0.0 || b.u() == 0.0) {
        return Err(bad());
    }
    let span = (t_hi - t_lo).to_f64();
    let x = bracket_root(
        |x| traj.sample(t_lo.add_f64(x * span)).map_or(f64::NAN, |s| s.u()),
        0.0,
        1.0,
    );
    let t = t_lo.add_f64(x * span);
    let s = traj.sample(t).ok_or_else(bad)?;
    Ok((t, s.w() * (-t.to_f64()).exp()))
}

/// Convenience wrapper of [`refine_zero`] taking plain radii.
pub fn refine_zero_radius(traj: &Trajectory, r_lo: f64, r_hi: f64) -> Result<(f64, f64)> {
    if !(r_lo > 0.0 && r_hi > r_lo) {
        return Err(Error::NoSignChange { lo: r_lo, hi: r_hi });
    }
    let (t, slope) = refine_zero(
        traj,
        (DoubleDouble::from_f64(r_lo.ln()), DoubleDouble::from_f64(r_hi.ln())),
    )?;
    Ok((t.to_f64().exp(), slope))
}

/// Integrates the radial equation from u(0) = s > 0.
pub fn integrate_radial(
    s: f64,
    p: &ProblemParams,
    stop: StopRule,
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidInput(format!("amplitude must be > 0, got {s}")));
    }
    match stop {
        StopRule::AfterZeros(0) => {
            return Err(Error::InvalidInput("AfterZeros needs n >= 1".into()));
        }
        StopRule::AtRadius(r) if !(r > 0.0 && r.is_finite()) => {
            return Err(Error::InvalidInput(format!("stop radius must be > 0, got {r}")));
        }
        _ => {}
    }
    let nl = p.nonlinearity();
    let precision = opts.precision.resolve(&nl, s)?;
    let log_lambda = p.log_lambda();
    let tol = opts.tolerances;

    // u² + 2 t0 + ln λ is assembled in double-double so that it survives s² ≫ 1.
    let pert = nl.perturbation(s);
    let sq = DoubleDouble::square(s);
    // ln γ = −½(ln 2 + 2 ln s + ln λ + s² + α s^β)
    let log_gamma = -(sq.add_f64(std::f64::consts::LN_2 + 2.0 * s.ln() + log_lambda + pert)).scale(0.5);
    let log_start = opts.start_factor.ln();
    let t0 = if log_gamma.hi < 0.0 {
        log_gamma.add_f64(log_start)
    } else {
        DoubleDouble::from_f64(log_start)
    };
    let sq_term = (sq + t0.scale(2.0)).add_f64(log_lambda).to_f64();

    // Series u = s − G r²/4 + G G′ r⁴/64 with G = λ f(s), G′ = λ f′(s).
    let g_r2 = (s.ln() + pert + sq_term).exp();
    let poly = 1.0 + 2.0 * s * s + nl.beta() * pert;
    let gp_r2 = (poly.ln() + pert + sq_term).exp();
    let du_series = -0.25 * g_r2 + g_r2 * gp_r2 / 64.0;
    let w0 = -0.5 * g_r2 + g_r2 * gp_r2 / 16.0;

    let frame = match precision {
        Precision::Extended => Frame::new(&nl, t0, s, log_lambda),
        _ => Frame::new(&nl, DoubleDouble::from_f64(t0.to_f64()), 0.0, log_lambda),
    };
    let mut y: State = [0.0; DIM];
    y[V] = if frame.u_base == 0.0 { s + du_series } else { du_series };
    y[W] = w0;
    y[DIRICHLET] = g_r2 * g_r2 / 16.0;
    y[NEHARI] = 0.5 * s * g_r2;
    y[MASS] = -w0;
    if opts.with_potential {
        let h = nl.scaled_primitive(s)?;
        y[POTENTIAL] = 0.5 * (sq_term + pert + h.ln()).exp();
    }

    let mut rhs = Rhs {
        nl,
        frame,
        potential: opts.with_potential,
        amplitude: s.min(1.0),
    };
    let log_cap = opts.radius_cap.ln();
    let stop_log_r = match stop {
        StopRule::AtRadius(r) => Some(r.ln()),
        StopRule::AfterZeros(_) => None,
    };
    let wanted = match stop {
        StopRule::AfterZeros(n) => n,
        StopRule::AtRadius(_) => usize::MAX,
    };

    let mut segments: Vec<Segment> = Vec::new();
    let mut current = Segment {
        frame,
        sign: 1.0,
        steps: Vec::new(),
    };
    let mut zeros: Vec<ZeroEvent> = Vec::new();
    let mut peaks: Vec<PeakEvent> = Vec::new();
    let mut peak_in_segment = false;

    let mut tau = 0.0;
    let mut k1 = rhs.eval(tau, &y)?;
    let mut h = 1e-2;
    let mut steps_taken = 0usize;
    let mut last_reject_nonfinite = false;
    let mut previous_rejected = false;

    loop {
        if steps_taken >= tol.max_steps {
            return Err(Error::StiffnessFailure {
                step: h,
                log_radius: current.frame.log_radius(tau).to_f64(),
            });
        }
        let t_now = current.frame.log_radius(tau);
        if let Some(log_r) = stop_log_r {
            let remaining = (log_r - t_now.to_f64()).min((DoubleDouble::from_f64(log_r) - t_now).to_f64());
            if remaining <= 4.0 * f64::EPSILON * log_r.abs().max(1.0) {
                break;
            }
            h = h.min(remaining);
        }
        let cap_remaining = (DoubleDouble::from_f64(log_cap) - t_now).to_f64();
        if cap_remaining <= 0.0 {
            segments.push(current);
            return Err(Error::ZeroNotReached {
                found: zeros.len(),
                wanted,
                reason: format!("radius cap {:e}", opts.radius_cap),
            });
        }
        h = h.min(cap_remaining.max(1e-3));

        let min_h = tol.min_step.max(8.0 * f64::EPSILON * tau.abs().max(1.0));
        if h < min_h {
            let log_radius = t_now.to_f64();
            if last_reject_nonfinite {
                return Err(Error::Overflow {
                    exponent: f64::INFINITY,
                    budget: crate::scalar::EXPONENT_BUDGET,
                    at_radius: Some(log_radius),
                });
            }
            return Err(Error::StiffnessFailure { step: h, log_radius });
        }

        let att = attempt(&rhs, &tol, tau, &y, &k1, h)?;
        steps_taken += 1;
        if !(att.err <= 1.0) {
            last_reject_nonfinite = !att.err.is_finite();
            let fac = if att.err.is_finite() {
                (0.9 * att.err.powf(-0.2)).max(0.2)
            } else {
                0.2
            };
            h *= fac;
            previous_rejected = true;
            continue;
        }
        last_reject_nonfinite = false;

        let mut step = Step {
            tau,
            h,
            y0: y,
            y1: att.y1,
            cont: att.cont,
        };
        let sigma = current.sign;

        // Interior critical point: σ·w leaves (0, ∞).
        if !current.steps.is_empty() || !segments.is_empty() {
            let w0 = sigma * y[W];
            let w1 = sigma * att.y1[W];
            if w0 > 0.0 && w1 <= 0.0 && !peak_in_segment {
                let theta = bracket_root(|th| step.interp(th)[W], 0.0, 1.0);
                let st = step.interp(theta);
                peaks.push(PeakEvent {
                    log_radius: current.frame.log_radius(tau + theta * h),
                    value: current.frame.u(st[V]).abs(),
                    segment: segments.len(),
                });
                peak_in_segment = true;
            }
        }

        let u1 = current.frame.u(att.y1[V]);
        if sigma * u1 <= 0.0 {
            // Zero inside the step: locate it on the dense output, then retake
            // the step so that it ends on the zero of the RK solution itself.
            let frame = current.frame;
            let theta = bracket_root(|th| frame.u(step.interp(th)[V]), 0.0, 1.0);
            let mut hz = (theta * h).max(min_h);
            let mut landed = attempt(&rhs, &tol, tau, &y, &k1, hz)?;
            for _ in 0..3 {
                let uz = frame.u(landed.y1[V]);
                let wz = landed.y1[W];
                if uz == 0.0 || wz == 0.0 {
                    break;
                }
                let dtau = -uz / wz;
                if dtau.abs() <= 4.0 * f64::EPSILON * (tau + hz).abs().max(1.0) {
                    break;
                }
                hz = (hz + dtau).max(min_h);
                landed = attempt(&rhs, &tol, tau, &y, &k1, hz)?;
            }
            step = Step {
                tau,
                h: hz,
                y0: y,
                y1: landed.y1,
                cont: landed.cont,
            };
            let zero_t = current.frame.log_radius(tau + hz);
            let mut yz = landed.y1;
            zeros.push(ZeroEvent {
                log_radius: zero_t,
                w: yz[W],
                segment: segments.len(),
            });
            current.steps.push(step);
            let next_sign = -current.sign;
            segments.push(std::mem::replace(
                &mut current,
                Segment {
                    frame: Frame::new(&nl, zero_t, 0.0, log_lambda),
                    sign: next_sign,
                    steps: Vec::new(),
                },
            ));
            if zeros.len() >= wanted {
                break;
            }
            yz[V] = 0.0;
            y = yz;
            tau = 0.0;
            rhs.frame = current.frame;
            k1 = rhs.eval(tau, &y)?;
            peak_in_segment = false;
            previous_rejected = false;
            continue;
        }

        current.steps.push(step);
        tau += h;
        y = att.y1;
        k1 = att.k7;
        let mut fac = if att.err > 0.0 {
            0.9 * att.err.powf(-0.2)
        } else {
            5.0
        };
        fac = fac.clamp(0.2, 5.0);
        if previous_rejected {
            fac = fac.min(1.0);
        }
        previous_rejected = false;
        h *= fac;
    }

    if !current.steps.is_empty() {
        segments.push(current);
    }
    Ok(Trajectory {
        params: *p,
        initial_amplitude: s,
        precision,
        with_potential: opts.with_potential,
        segments,
        zeros,
        peaks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bessel;

    fn unit(alpha: f64, beta: f64) -> ProblemParams {
        ProblemParams::new(alpha, beta, 1.0).unwrap()
    }

    #[test]
    fn tiny_amplitude_first_zero_is_bessel() {
        let p = unit(1.0, 1.0);
        let traj = integrate_radial(1e-8, &p, StopRule::AfterZeros(1), &IntegrateOptions::default()).unwrap();
        let t1 = bessel::j0_zero(1).unwrap().t_k;
        assert_eq!(traj.zeros.len(), 1);
        let z = traj.zeros[0].radius();
        assert!((z - 2.404826).abs() < 1e-4);
        assert!((z - t1).abs() < 1e-6, "{z} vs {t1}");
        assert!(traj.zeros[0].slope() < 0.0);
    }

    #[test]
    fn monotone_decay_in_first_domain() {
        for s in [0.5, 3.0, 12.0] {
            let traj = integrate_radial(s, &unit(1.0, 1.2), StopRule::AfterZeros(1), &IntegrateOptions::default())
                .unwrap();
            for st in traj.states() {
                assert!(st.w < 0.0, "s = {s}");
            }
            assert!(traj.peaks.is_empty());
        }
    }

    #[test]
    fn first_integral_before_first_zero() {
        let p = unit(1.0, 1.2);
        let opts = IntegrateOptions::default();
        let probe = integrate_radial(4.0, &p, StopRule::AfterZeros(1), &opts).unwrap();
        let r_stop = 0.5 * probe.zeros[0].radius();
        let traj = integrate_radial(4.0, &p, StopRule::AtRadius(r_stop), &opts).unwrap();
        let end = traj.end_sample();
        assert!((end.log_radius().to_f64() - r_stop.ln()).abs() < 1e-12);
        assert!((end.w() + end.mass()).abs() < 1e-8);
        assert!(traj.first_integral_residual() < 1e-8);
        // The mass channel is an independent running integral of λ f(u) r dr;
        // re-integrating the dense forcing must give the same number.
        let nl = p.nonlinearity();
        let quad = traj
            .integrate_log(traj.start_log_radius(), end.log_radius(), |s| {
                s.frame.forcing(&nl, s.tau, s.v())
            })
            .unwrap()
            + traj.start_sample().mass();
        assert!((quad - end.mass()).abs() < 1e-8, "{quad} vs {}", end.mass());
    }

    #[test]
    fn zeros_and_peaks_interleave() {
        let traj = integrate_radial(2.0, &unit(1.0, 1.2), StopRule::AfterZeros(4), &IntegrateOptions::default())
            .unwrap();
        assert_eq!(traj.zeros.len(), 4);
        assert_eq!(traj.peaks.len(), 3);
        for (i, pk) in traj.peaks.iter().enumerate() {
            let lo = traj.zeros[i].log_radius.to_f64();
            let hi = traj.zeros[i + 1].log_radius.to_f64();
            let t = pk.log_radius.to_f64();
            assert!(lo < t && t < hi);
        }
        for w in traj.zeros.windows(2) {
            assert!(w[0].log_radius.to_f64() < w[1].log_radius.to_f64());
            assert!(w[0].w * w[1].w < 0.0);
        }
        // Running integrals are nondecreasing.
        let states = traj.states();
        for pair in states.windows(2) {
            assert!(pair[1].e_dirichlet >= pair[0].e_dirichlet);
            assert!(pair[1].e_nehari >= pair[0].e_nehari);
        }
    }

    #[test]
    fn refine_zero_on_dense_output() {
        let traj = integrate_radial(1e-8, &unit(1.0, 1.0), StopRule::AtRadius(3.0), &IntegrateOptions::default())
            .unwrap();
        let (z, slope) = refine_zero_radius(&traj, 2.3, 2.5).unwrap();
        let t1 = bessel::j0_zero(1).unwrap().t_k;
        assert!((z - t1).abs() < 1e-6);
        assert!(slope < 0.0);
        assert!(matches!(
            refine_zero_radius(&traj, 1.0, 2.0),
            Err(Error::NoSignChange { .. })
        ));
        // A symmetric bracket around the root returns the root.
        let (z2, _) = refine_zero_radius(&traj, z - 0.01, z + 0.01).unwrap();
        assert!((z2 - z).abs() < 1e-13);
    }

    #[test]
    fn potential_channel_is_nonnegative_and_monotone() {
        let opts = IntegrateOptions {
            with_potential: true,
            ..Default::default()
        };
        let traj = integrate_radial(1.5, &unit(1.0, 1.2), StopRule::AfterZeros(2), &opts).unwrap();
        let states = traj.states();
        assert!(states.iter().all(|s| s.e_potential >= 0.0));
        for pair in states.windows(2) {
            assert!(pair[1].e_potential >= pair[0].e_potential);
        }
    }

    #[test]
    fn self_convergence_under_halved_tolerances() {
        let p = unit(1.0, 1.2);
        let base = IntegrateOptions::default();
        let fine = IntegrateOptions {
            tolerances: base.tolerances.halved(),
            ..base
        };
        let a = integrate_radial(3.0, &p, StopRule::AfterZeros(3), &base).unwrap();
        let b = integrate_radial(3.0, &p, StopRule::AfterZeros(3), &fine).unwrap();
        for (za, zb) in a.zeros.iter().zip(&b.zeros) {
            let (ra, rb) = (za.radius(), zb.radius());
            assert!((ra - rb).abs() < 10.0 * base.tolerances.rtol * ra.max(1.0), "{ra} vs {rb}");
        }
    }

    #[test]
    fn extended_and_double_agree_within_budget() {
        let p = unit(1.0, 1.2);
        let mk = |precision| IntegrateOptions {
            precision,
            ..Default::default()
        };
        let a = integrate_radial(8.0, &p, StopRule::AfterZeros(1), &mk(Precision::Double)).unwrap();
        let b = integrate_radial(8.0, &p, StopRule::AfterZeros(1), &mk(Precision::Extended)).unwrap();
        assert_eq!(b.precision, Precision::Extended);
        let (ta, tb) = (a.zeros[0].log_radius.to_f64(), b.zeros[0].log_radius.to_f64());
        assert!((ta - tb).abs() < 1e-8 * ta.abs(), "{ta} vs {tb}");
    }

    #[test]
    fn double_refuses_amplitudes_past_the_budget() {
        let opts = IntegrateOptions {
            precision: Precision::Double,
            ..Default::default()
        };
        let err = integrate_radial(40.0, &unit(1.0, 1.2), StopRule::AfterZeros(1), &opts).unwrap_err();
        assert!(matches!(err, Error::Overflow { .. }));
    }

    #[test]
    fn input_validation() {
        let p = unit(1.0, 1.0);
        let opts = IntegrateOptions::default();
        assert!(integrate_radial(0.0, &p, StopRule::AfterZeros(1), &opts).is_err());
        assert!(integrate_radial(1.0, &p, StopRule::AfterZeros(0), &opts).is_err());
        assert!(integrate_radial(1.0, &p, StopRule::AtRadius(-1.0), &opts).is_err());
    }

    #[test]
    fn rescaling_moves_radii_and_lambda() {
        let p = unit(1.0, 1.2);
        let traj = integrate_radial(2.0, &p, StopRule::AfterZeros(1), &IntegrateOptions::default()).unwrap();
        let shift = traj.zeros[0].log_radius;
        let unit_ball = traj.rescaled(shift).unwrap();
        assert!(unit_ball.zeros[0].log_radius.to_f64().abs() < 1e-15);
        let lam = (2.0 * shift.to_f64()).exp();
        assert!((unit_ball.params.lambda() - lam).abs() < 1e-14 * lam);
        assert_eq!(unit_ball.zeros[0].w, traj.zeros[0].w);
    }
}
