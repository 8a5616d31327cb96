//! J₀ zeros checked against a plain f64 power series and bisection, sharing
//! no code with the library.

use tmb_core::bessel::{eigenpairs, j0, j0_zero};

fn series_j0(x: f64) -> f64 {
    let q = -x * x / 4.0;
    let (mut term, mut sum) = (1.0f64, 1.0f64);
    for j in 1..80 {
        term *= q / (j as f64 * j as f64);
        sum += term;
    }
    sum
}

fn bisect(mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = series_j0(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = series_j0(mid);
        if fm == 0.0 {
            return mid;
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn first_zeros_match_series_bisection() {
    let t1 = bisect(2.0, 3.0);
    let t2 = bisect(5.0, 6.0);
    assert!((j0_zero(1).unwrap().t_k - t1).abs() < 1e-10);
    assert!((j0_zero(2).unwrap().t_k - t2).abs() < 1e-10);
    assert!((t1 - 2.404825557695773).abs() < 1e-10);
    assert!((t2 - 5.520078110286311).abs() < 1e-10);
    assert!((j0_zero(1).unwrap().lambda_k - 5.783185962946785).abs() < 1e-9);
}

#[test]
fn library_j0_matches_plain_series() {
    for i in 0..=160 {
        let x = i as f64 * 0.05;
        assert!((j0(x) - series_j0(x)).abs() < 1e-13, "x = {x}");
    }
}

#[test]
fn higher_zeros_match_bisection_brackets() {
    // Consecutive zeros are about π apart; bracket each around the library value.
    for p in eigenpairs(5).unwrap() {
        let t = bisect(p.t_k - 0.5, p.t_k + 0.5);
        assert!((p.t_k - t).abs() < 1e-9, "k = {}", p.k);
    }
}
