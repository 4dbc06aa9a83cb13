//! Composite Gauss–Legendre quadrature.

use num_complex::Complex64;

/// Panel count used for intensity integrals on `[0, T*]`.
pub const DEFAULT_PANELS: usize = 512;

const GL5_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683_1,
    0.0,
    0.538_469_310_105_683_1,
    0.906_179_845_938_664,
];
const GL5_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_08,
    0.478_628_670_499_366_47,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_47,
    0.236_926_885_056_189_08,
];

pub fn integrate(a: f64, b: f64, panels: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
    let h = (b - a) / panels as f64;
    let mut sum = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        for (x, w) in GL5_NODES.iter().zip(&GL5_WEIGHTS) {
            sum += w * f(mid + 0.5 * h * x);
        }
    }
    0.5 * h * sum
}

pub fn integrate_complex(
    a: f64,
    b: f64,
    panels: usize,
    mut f: impl FnMut(f64) -> Complex64,
) -> Complex64 {
    let h = (b - a) / panels as f64;
    let mut sum = Complex64::new(0.0, 0.0);
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        for (x, w) in GL5_NODES.iter().zip(&GL5_WEIGHTS) {
            sum += *w * f(mid + 0.5 * h * x);
        }
    }
    sum * (0.5 * h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_degree_nine() {
        let v = integrate(-1.0, 2.0, 1, |x| x.powi(9) - 3.0 * x.powi(4));
        let exact = (2f64.powi(10) - 1.0) / 10.0 - 3.0 * (32.0 + 1.0) / 5.0;
        assert!((v - exact).abs() < 1e-11);
    }

    #[test]
    fn full_period_exponential_vanishes() {
        let v = integrate_complex(0.0, 3.0, 64, |t| {
            (Complex64::new(0.0, -2.0 * std::f64::consts::PI / 3.0) * t).exp()
        });
        assert!(v.norm() < 1e-14);
    }
}
