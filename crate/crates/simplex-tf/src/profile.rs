//! Compactly supported profiles: the order-8 cardinal B-spline and its relatives.

use std::f64::consts::PI;

/// Spline order used for every library bump.
pub const SPLINE_ORDER: usize = 8;

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, i| acc * i as f64)
}

/// `d`-th derivative of the cardinal B-spline `M_m` supported on `[0, m]`.
pub fn cardinal_bspline_deriv(m: usize, d: usize, x: f64) -> f64 {
    if x <= 0.0 || x >= m as f64 || d >= m {
        return 0.0;
    }
    // Evaluate on the left half to limit cancellation; M_m is symmetric about m/2.
    let (x, sign) = if x > m as f64 / 2.0 {
        (m as f64 - x, if d.is_multiple_of(2) { 1.0 } else { -1.0 })
    } else {
        (x, 1.0)
    };
    let deg = m - 1 - d;
    let mut acc = 0.0;
    for j in 0..=m {
        let t = x - j as f64;
        if t <= 0.0 {
            break;
        }
        let term = binomial(m, j) * t.powi(deg as i32);
        acc += if j % 2 == 0 { term } else { -term };
    }
    sign * acc / factorial(deg)
}

pub fn cardinal_bspline(m: usize, x: f64) -> f64 {
    cardinal_bspline_deriv(m, 0, x)
}

/// Peak-normalised even bump supported in `[-1/2, 1/2]`.
pub fn bump(t: f64) -> f64 {
    bump_deriv(0, t)
}

/// `d`-th derivative of [`bump`].
pub fn bump_deriv(d: usize, t: f64) -> f64 {
    let m = SPLINE_ORDER;
    let peak = cardinal_bspline(m, m as f64 / 2.0);
    (m as f64).powi(d as i32) * cardinal_bspline_deriv(m, d, m as f64 * t + m as f64 / 2.0) / peak
}

/// Unit-mass even bump supported in `[-1/2, 1/2]`; it is the autocorrelation of
/// the order-4 spline on `[-1/4, 1/4]`, so its Fourier transform is nonnegative.
pub fn unit_mass_bump(t: f64) -> f64 {
    let m = SPLINE_ORDER as f64;
    m * cardinal_bspline(SPLINE_ORDER, m * t + m / 2.0)
}

/// Fourier transform of [`unit_mass_bump`]: `sinc(x/8)^8`.
pub fn unit_mass_bump_hat(x: f64) -> f64 {
    sinc(x / SPLINE_ORDER as f64).powi(SPLINE_ORDER as i32)
}

pub fn sinc(y: f64) -> f64 {
    if y.abs() < 1e-8 {
        1.0 - (PI * y).powi(2) / 6.0
    } else {
        (PI * y).sin() / (PI * y)
    }
}

/// Smooth step: `0` for `t <= 0`, `1` for `t >= 1`, `S(t) + S(1-t) = 1`, `C^7`.
pub fn smoothstep(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let n = 15;
    (8..=n)
        .map(|j| binomial(n, j) * t.powi(j as i32) * (1.0 - t).powi((n - j) as i32))
        .sum()
}

/// Equal to one on `[a, b]`, zero outside `[a - w, b + w]`, smooth in between.
pub fn plateau(x: f64, a: f64, b: f64, w: f64) -> f64 {
    smoothstep((x - (a - w)) / w) * smoothstep(((b + w) - x) / w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spline_partition_and_mass() {
        // Integer translates of M_m sum to one.
        for i in 0..20 {
            let x = 0.37 + i as f64 * 0.05;
            let s: f64 = (-8..8).map(|j| cardinal_bspline(8, x - j as f64)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let h = 1e-4;
        let mass: f64 = (0..10_000).map(|i| unit_mass_bump(-0.5 + (i as f64 + 0.5) * h) * h).sum();
        assert!((mass - 1.0).abs() < 1e-8);
    }

    #[test]
    fn bump_support_and_peak() {
        assert_eq!(bump(0.5), 0.0);
        assert_eq!(bump(-0.5), 0.0);
        assert!((bump(0.0) - 1.0).abs() < 1e-14);
        assert!((bump(0.2) - bump(-0.2)).abs() < 1e-13);
    }

    #[test]
    fn derivative_matches_difference_quotient() {
        for &t in &[-0.31, -0.1, 0.05, 0.27] {
            for d in 0..4 {
                let h = 1e-5;
                let fd = (bump_deriv(d, t + h) - bump_deriv(d, t - h)) / (2.0 * h);
                let exact = bump_deriv(d + 1, t);
                assert!((fd - exact).abs() < 1e-4 * exact.abs().max(1.0), "d={d} t={t}");
            }
        }
    }

    #[test]
    fn unit_mass_transform_matches_quadrature() {
        for &x in &[0.0, 0.7, 1.0, 3.0] {
            let h = 1e-4;
            let q: f64 = (0..10_000)
                .map(|i| {
                    let t = -0.5 + (i as f64 + 0.5) * h;
                    unit_mass_bump(t) * (2.0 * PI * x * t).cos() * h
                })
                .sum();
            assert!((q - unit_mass_bump_hat(x)).abs() < 1e-7);
        }
        assert!(unit_mass_bump_hat(2.3) >= 0.0);
    }

    #[test]
    fn smoothstep_symmetry() {
        for i in 0..=20 {
            let t = i as f64 / 20.0;
            assert!((smoothstep(t) + smoothstep(1.0 - t) - 1.0).abs() < 1e-14);
        }
        assert_eq!(plateau(0.5, 0.0, 1.0, 0.1), 1.0);
        assert_eq!(plateau(1.2, 0.0, 1.0, 0.1), 0.0);
    }
}
