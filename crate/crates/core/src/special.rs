//! Special functions used by the optics and correlation models.

use std::f64::consts::PI;

/// sin(u)/u with the removable singularity filled in.
pub fn sinc(u: f64) -> f64 {
    if u.abs() < 1e-4 {
        // 1 - u^2/6 + u^4/120, exact to f64 precision in this range
        let u2 = u * u;
        1.0 - u2 / 6.0 + u2 * u2 / 120.0
    } else {
        u.sin() / u
    }
}

/// d/du sinc(u).
pub fn sinc_deriv(u: f64) -> f64 {
    if u.abs() < 1e-3 {
        let u2 = u * u;
        -u / 3.0 + u * u2 / 30.0
    } else {
        (u * u.cos() - u.sin()) / (u * u)
    }
}

/// Above this argument the Hankel expansion is used instead of quadrature.
const ASYMPTOTIC_FROM: f64 = 40.0;

/// Trapezoid nodes on [0, pi] for the Bessel integrals. The error of the
/// rule is of order J_2n(x), negligible once 2n exceeds |x| by a margin.
fn bessel_nodes(x: f64) -> usize {
    24 + x.abs().min(ASYMPTOTIC_FROM).ceil() as usize
}

/// Hankel expansion of J_n(x) for large positive x.
fn bessel_asymptotic(order: u32, x: f64) -> f64 {
    let mu = 4.0 * (order * order) as f64;
    let (mut p, mut q) = (0.0, 0.0);
    let mut term = 1.0;
    for k in 0..30 {
        if k > 0 {
            let odd = (2 * k - 1) as f64;
            term *= (mu - odd * odd) / (k as f64 * 8.0 * x);
        }
        let signed = if (k / 2) % 2 == 0 { term } else { -term };
        if k % 2 == 0 {
            p += signed;
        } else {
            q += signed;
        }
        if term.abs() < 1e-17 {
            break;
        }
    }
    let chi = x - (0.5 * order as f64 + 0.25) * PI;
    (2.0 / (PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
}

/// Bessel function of the first kind, order zero.
///
/// Evaluates J0(x) = (1/pi) * integral_0^pi cos(x sin t) dt with the
/// trapezoidal rule, which converges geometrically for this periodic
/// integrand, and switches to the asymptotic series for large |x|.
pub fn bessel_j0(x: f64) -> f64 {
    if x.abs() > ASYMPTOTIC_FROM {
        return bessel_asymptotic(0, x.abs());
    }
    let n = bessel_nodes(x);
    let step = PI / n as f64;
    // both endpoints equal 1
    let mut sum = 1.0;
    for k in 1..n {
        sum += (x * (k as f64 * step).sin()).cos();
    }
    sum / n as f64
}

/// Bessel function of the first kind, order one, from
/// J1(x) = (1/pi) * integral_0^pi cos(t - x sin t) dt.
pub fn bessel_j1(x: f64) -> f64 {
    if x.abs() > ASYMPTOTIC_FROM {
        return x.signum() * bessel_asymptotic(1, x.abs());
    }
    let n = bessel_nodes(x);
    let step = PI / n as f64;
    // endpoints 1 and -1 cancel
    let mut sum = 0.0;
    for k in 1..n {
        let t = k as f64 * step;
        sum += (t - x * t.sin()).cos();
    }
    sum / n as f64
}

/// Smallest positive u with sinc(u)^2 = level, for level in (0, 1).
pub fn sinc2_inverse(level: f64) -> f64 {
    // sinc^2 is strictly decreasing on (0, pi)
    let (mut lo, mut hi) = (0.0_f64, PI);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sinc(mid).powi(2) > level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn j0_series(x: f64) -> f64 {
        // independent power series
        let mut term = 1.0;
        let mut sum = 1.0;
        let q = x * x / 4.0;
        for k in 1..80 {
            term *= -q / (k as f64 * k as f64);
            sum += term;
        }
        sum
    }

    #[test]
    fn j0_matches_series() {
        for &x in &[0.0, 0.3, 1.0, 0.4 * PI, 2.0, 2.4048, 0.87 * PI, 5.0, 9.5] {
            assert!((bessel_j0(x) - j0_series(x)).abs() < 1e-13, "x = {x}");
        }
        assert!((bessel_j0(1.0) - 0.765_197_686_557_966_6).abs() < 1e-15);
        assert!(bessel_j0(2.404_825_557_695_773).abs() < 1e-14);
        assert!((bessel_j0(14.0) - 0.171_073_476_110_458_78).abs() < 1e-14);
    }

    fn j1_series(x: f64) -> f64 {
        let q = x * x / 4.0;
        let mut term = x / 2.0;
        let mut sum = term;
        for k in 1..80 {
            term *= -q / (k as f64 * (k + 1) as f64);
            sum += term;
        }
        sum
    }

    #[test]
    fn j1_matches_series_and_derivative() {
        for &x in &[0.0, 0.3, 1.0, 0.8 * PI, 3.8317, 6.0, 9.5] {
            assert!((bessel_j1(x) - j1_series(x)).abs() < 1e-13, "x = {x}");
            let h = 1e-5;
            let fd = (bessel_j0(x + h) - bessel_j0(x - h)) / (2.0 * h);
            assert!((fd + bessel_j1(x)).abs() < 1e-9);
        }
    }

    #[test]
    fn quadrature_and_asymptotic_agree_at_the_switch() {
        for &x in &[40.5f64, 55.0, 1e3, 2e4] {
            let n = 24 + x.ceil() as usize;
            let step = PI / n as f64;
            let j0 = (1.0 + (1..n).map(|k| (x * (k as f64 * step).sin()).cos()).sum::<f64>()) / n as f64;
            let j1 = (1..n)
                .map(|k| (k as f64 * step - x * (k as f64 * step).sin()).cos())
                .sum::<f64>()
                / n as f64;
            assert!((bessel_j0(x) - j0).abs() < 1e-13, "x = {x}");
            assert!((bessel_j1(x) - j1).abs() < 1e-13, "x = {x}");
            assert_eq!(bessel_j1(-x), -bessel_j1(x));
        }
        assert!((bessel_j0(100.0) - 0.019_985_850_304_223_33).abs() < 1e-15);
    }

    #[test]
    fn sinc_is_smooth_at_zero() {
        assert_eq!(sinc(0.0), 1.0);
        let a = sinc(0.999e-4);
        let b = 0.999e-4_f64.sin() / 0.999e-4;
        assert!((a - b).abs() < 1e-15);
        let h = 1e-6;
        for &u in &[0.0, 5e-4, 0.2, 2.0] {
            let fd = (sinc(u + h) - sinc(u - h)) / (2.0 * h);
            assert!((fd - sinc_deriv(u)).abs() < 1e-8, "u = {u}");
        }
    }

    #[test]
    fn sinc2_inverse_hits_level() {
        for &l in &[0.9, 0.5, 0.1, 0.01] {
            let u = sinc2_inverse(l);
            assert!((sinc(u).powi(2) - l).abs() < 1e-12);
        }
    }
}
