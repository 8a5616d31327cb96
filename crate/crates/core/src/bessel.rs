//! J₀, its positive zeros t_k and the radial Dirichlet eigenpairs
//! Λ_k = t_k², φ_k(x) = J₀(t_k|x|) of the unit disk.

use std::f64::consts::{FRAC_PI_4, PI};

use serde::Serialize;

use crate::scalar::DoubleDouble;
use crate::{Error, Result};

/// Below this the power series is summed in double-double; above it the
/// Hankel expansion is already below 1e−16.
const SERIES_LIMIT: f64 = 20.0;

pub const MAX_ZERO_INDEX: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Eigenpair {
    pub k: usize,
    pub t_k: f64,
    pub lambda_k: f64,
}

impl Eigenpair {
    /// φ_k(r) = J₀(t_k r), normalized by φ_k(0) = 1.
    pub fn eigenfunction(&self, r: f64) -> f64 {
        j0(self.t_k * r)
    }
}

/// First-kind Bessel function of order zero.
pub fn j0(r: f64) -> f64 {
    let x = r.abs();
    if x <= SERIES_LIMIT {
        series(x)
    } else {
        hankel(x)
    }
}

fn series(x: f64) -> f64 {
    // Σ (−1)^j (x²/4)^j / (j!)²
    let quarter_sq = -DoubleDouble::square(x).scale(0.25);
    let mut term = DoubleDouble::from_f64(1.0);
    let mut sum = term;
    for j in 1..200 {
        let jf = j as f64;
        term = term.mul(quarter_sq).div_f64(jf * jf);
        sum = sum + term;
        if term.hi.abs() < 1e-34 && jf > 0.5 * x {
            break;
        }
    }
    sum.to_f64()
}

fn hankel(x: f64) -> f64 {
    // c_k = Π_{j≤k} (2j−1)² / (k! (8x)^k); P takes even k, Q odd k, with
    // alternating signs starting P = 1, Q = −1/(8x).
    let mut p = 1.0;
    let mut q = 0.0;
    let mut c = 1.0;
    let mut prev = f64::INFINITY;
    for k in 1..60u32 {
        let kf = k as f64;
        let odd = 2.0 * kf - 1.0;
        c *= odd * odd / (kf * 8.0 * x);
        if c >= prev || c < 1e-18 {
            break;
        }
        prev = c;
        if k % 2 == 0 {
            p += if (k / 2) % 2 == 1 { -c } else { c };
        } else {
            q += if k.div_ceil(2) % 2 == 1 { -c } else { c };
        }
    }
    let phase = x - FRAC_PI_4;
    (2.0 / (PI * x)).sqrt() * (p * phase.cos() - q * phase.sin())
}

/// k-th positive zero of J₀ (1 ≤ k ≤ 20), seeded by McMahon's expansion and
/// polished by bisection/secant on [`j0`].
pub fn j0_zero(k: usize) -> Result<Eigenpair> {
    if k == 0 || k > MAX_ZERO_INDEX {
        return Err(Error::InvalidInput(format!(
            "zero index must lie in 1..={MAX_ZERO_INDEX}, got {k}"
        )));
    }
    let b = (k as f64 - 0.25) * PI;
    let guess = b + 1.0 / (8.0 * b);
    let (mut lo, mut hi) = (guess - 0.25, guess + 0.25);
    let (mut flo, mut fhi) = (j0(lo), j0(hi));
    if flo * fhi > 0.0 {
        return Err(Error::NoSignChange { lo, hi });
    }
    // Illinois-modified regula falsi with a bisection fallback.
    let mut side = 0i8;
    for _ in 0..200 {
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
        let mut x = (lo * fhi - hi * flo) / (fhi - flo);
        if !(x > lo && x < hi) {
            x = 0.5 * (lo + hi);
        }
        let fx = j0(x);
        if fx == 0.0 {
            lo = x;
            hi = x;
            break;
        }
        if fx * flo < 0.0 {
            hi = x;
            fhi = fx;
            if side == -1 {
                flo *= 0.5;
            }
            side = -1;
        } else {
            lo = x;
            flo = fx;
            if side == 1 {
                fhi *= 0.5;
            }
            side = 1;
        }
    }
    let t_k = 0.5 * (lo + hi);
    Ok(Eigenpair {
        k,
        t_k,
        lambda_k: t_k * t_k,
    })
}

/// The first `count` eigenpairs in increasing order.
pub fn eigenpairs(count: usize) -> Result<Vec<Eigenpair>> {
    (1..=count).map(j0_zero).collect()
}
