//! Exponential test functions `v(x,t) = e^{αt + ρ·x}` of the backward heat
//! equation `∂_t v + κΔv = 0`, and the direction schemes that generate them.

use crate::error::{Error, Result};
use crate::heat::{Field, Grid2D};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

/// Largest admissible real part of an exponent.
pub const MAX_EXPONENT: f64 = 700.0;

/// `e^{αt + ρ·x}` with `α + κρ·ρ = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CgoFunction {
    pub alpha: Complex64,
    pub rho: [Complex64; 2],
    pub kappa: f64,
}

impl CgoFunction {
    /// The constant function 1.
    pub fn one(kappa: f64) -> Self {
        CgoFunction {
            alpha: Complex64::new(0.0, 0.0),
            rho: [Complex64::new(0.0, 0.0); 2],
            kappa,
        }
    }

    /// `e^{αt}`; only in the adjoint family when `α = 0`.
    pub fn temporal(alpha: Complex64, kappa: f64) -> Self {
        CgoFunction {
            alpha,
            rho: [Complex64::new(0.0, 0.0); 2],
            kappa,
        }
    }

    pub fn rho_dot_rho(&self) -> Complex64 {
        self.rho[0] * self.rho[0] + self.rho[1] * self.rho[1]
    }

    /// `|α + κρ·ρ|`.
    pub fn membership_residual(&self) -> f64 {
        (self.alpha + self.kappa * self.rho_dot_rho()).norm()
    }

    pub fn conj(&self) -> Self {
        CgoFunction {
            alpha: self.alpha.conj(),
            rho: [self.rho[0].conj(), self.rho[1].conj()],
            kappa: self.kappa,
        }
    }

    #[inline]
    pub fn exponent(&self, x: [f64; 2], t: f64) -> Complex64 {
        self.alpha * t + self.rho[0] * x[0] + self.rho[1] * x[1]
    }

    pub fn eval(&self, x: [f64; 2], t: f64) -> Result<Complex64> {
        let z = self.exponent(x, t);
        if z.re > MAX_EXPONENT {
            return Err(Error::Overflow { re: z.re });
        }
        Ok(z.exp())
    }

    /// `∂v/∂n = (ρ·n) v` at a boundary point with unit outward normal `n`.
    pub fn eval_normal_derivative(&self, x: [f64; 2], n: [f64; 2], t: f64) -> Result<Complex64> {
        let rn = self.rho[0] * n[0] + self.rho[1] * n[1];
        Ok(rn * self.eval(x, t)?)
    }

    /// Centered-difference normal derivative factor `sinh(h ρ·n)/h`, with
    /// `h` the grid spacing normal to the edge.
    pub fn discrete_normal_factor(&self, n: [f64; 2], h: f64) -> Complex64 {
        let rn = self.rho[0] * n[0] + self.rho[1] * n[1];
        (rn * h).sinh() / h
    }

    /// The test function that solves the Crank–Nicolson adjoint scheme on
    /// `grid` with step `dt` exactly, keeping `α`.
    ///
    /// Each `ρ_d` is mapped to `ρ̃_d` with
    /// `(4/h_d²) sinh²(ρ̃_d h_d / 2) = ρ_d² tanh(z)/z`, `z = κ dt ρ·ρ / 2`,
    /// so the modal amplification of the scheme equals `e^{-α dt}`.
    pub fn adapted_to(&self, grid: &Grid2D, dt: f64) -> Self {
        let z = self.kappa * dt * 0.5 * self.rho_dot_rho();
        let tau = if z.norm() < 1e-14 {
            Complex64::new(1.0, 0.0)
        } else {
            z.tanh() / z
        };
        let root = tau.sqrt();
        let h = [grid.hx(), grid.hy()];
        let mut out = *self;
        for d in 0..2 {
            out.rho[d] = (self.rho[d] * root * (0.5 * h[d])).asinh() * (2.0 / h[d]);
        }
        out
    }

    /// `|g e^{α dt} - 1|` with `g` the Crank–Nicolson amplification of the
    /// grid eigenvalue of `e^{ρ·x}`; zero for [`Self::adapted_to`] output.
    pub fn discrete_residual(&self, grid: &Grid2D, dt: f64) -> f64 {
        let h = [grid.hx(), grid.hy()];
        let mu: Complex64 = (0..2)
            .map(|d| {
                let s = (self.rho[d] * (0.5 * h[d])).sinh();
                s * s * (4.0 / (h[d] * h[d]))
            })
            .sum();
        let c = 0.5 * self.kappa * dt;
        let g = (1.0 + c * mu) / (1.0 - c * mu);
        (g * (self.alpha * dt).exp() - 1.0).norm()
    }

    /// Largest real exponent over the rectangle at time `t`.
    pub fn max_exponent_on(&self, grid: &Grid2D, t: f64) -> f64 {
        self.alpha.re * t
            + (self.rho[0].re * grid.lx).max(0.0)
            + (self.rho[1].re * grid.ly).max(0.0)
    }

    /// Real and imaginary parts of `v(·, t)` on the grid nodes.
    pub fn field_at(&self, grid: &Grid2D, t: f64) -> Result<(Field, Field)> {
        let top = self.max_exponent_on(grid, t);
        if top > MAX_EXPONENT {
            return Err(Error::Overflow { re: top });
        }
        let mut re = Vec::with_capacity(grid.len());
        let mut im = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let v = self.exponent([grid.x(i), grid.y(j)], t).exp();
                re.push(v.re);
                im.push(v.im);
            }
        }
        Ok((
            Field {
                grid: *grid,
                values: re,
            },
            Field {
                grid: *grid,
                values: im,
            },
        ))
    }
}

/// Real vector `b` making `ρ = a + ib` satisfy `ρ·ρ = 2kπi`.
///
/// With `a = |a|(cos β, sin β)`, `b = |a|(cos γ, sin γ)` and
/// `γ = β + arccos(kπ/|a|²)`.
pub fn make_vector_b(a: [f64; 2], k: f64) -> Result<[f64; 2]> {
    let norm2 = a[0] * a[0] + a[1] * a[1];
    let min = (k.abs() * PI).sqrt();
    if norm2 < k.abs() * PI * (1.0 - 1e-12) || !norm2.is_finite() {
        return Err(Error::VectorBInadmissible {
            norm: norm2.sqrt(),
            min,
        });
    }
    if norm2 == 0.0 {
        return Ok([0.0, 0.0]);
    }
    let norm = norm2.sqrt();
    let beta = a[1].atan2(a[0]);
    let gamma = beta + (k * PI / norm2).clamp(-1.0, 1.0).acos();
    Ok([norm * gamma.cos(), norm * gamma.sin()])
}

/// Parameters of one family of test functions sharing `α`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionScheme {
    pub k: usize,
    pub r: f64,
    pub alpha: Complex64,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl DirectionScheme {
    pub fn count(&self) -> usize {
        self.beta.len()
    }

    /// `ρ_l = r((cos β_l, sin β_l) + i(cos γ_l, sin γ_l))`.
    pub fn functions(&self, kappa: f64) -> Vec<CgoFunction> {
        self.beta
            .iter()
            .zip(&self.gamma)
            .map(|(&b, &g)| CgoFunction {
                alpha: self.alpha,
                rho: [
                    Complex64::new(self.r * b.cos(), self.r * g.cos()),
                    Complex64::new(self.r * b.sin(), self.r * g.sin()),
                ],
                kappa,
            })
            .collect()
    }
}

/// Base scale `2√2 / diag(Ω)`.
pub fn base_scale(grid: &Grid2D) -> f64 {
    2.0 * std::f64::consts::SQRT_2 / grid.diag()
}

/// `3M` static directions, `β_l = 2lπ/(3M)`, `γ_l = β_l − π/2`.
pub fn zero_mode_scheme(m: usize, grid: &Grid2D) -> Result<DirectionScheme> {
    if m == 0 {
        return Err(Error::InvalidParameter("M must be at least 1".into()));
    }
    let n = 3 * m;
    let beta: Vec<f64> = (1..=n).map(|l| 2.0 * l as f64 * PI / n as f64).collect();
    let gamma = beta.iter().map(|b| b - FRAC_PI_2).collect();
    Ok(DirectionScheme {
        k: 0,
        r: base_scale(grid),
        alpha: Complex64::new(0.0, 0.0),
        beta,
        gamma,
    })
}

pub fn make_zero_mode_functions(m: usize, grid: &Grid2D, kappa: f64) -> Result<Vec<CgoFunction>> {
    Ok(zero_mode_scheme(m, grid)?.functions(kappa))
}

/// Default scale `r_k = max{2√2/diag(Ω), √(kπ/(2κT*))}`.
pub fn mode_scale(k: usize, t_star: f64, kappa: f64, grid: &Grid2D) -> f64 {
    base_scale(grid).max((k as f64 * PI / (2.0 * kappa * t_star)).sqrt())
}

/// `M` directions for mode `k ≥ 1` with half frequency `α = −kπi/T*`.
pub fn mode_scheme_with_scale(
    k: usize,
    m: usize,
    r: f64,
    t_star: f64,
    kappa: f64,
) -> Result<DirectionScheme> {
    if k == 0 || m == 0 {
        return Err(Error::InvalidParameter("mode and count must be at least 1".into()));
    }
    if !(kappa > 0.0 && t_star > 0.0) {
        return Err(Error::InvalidParameter("κ and T* must be positive".into()));
    }
    let min = (k as f64 * PI / (2.0 * kappa * t_star)).sqrt();
    let mut arg = k as f64 * PI / (2.0 * kappa * r * r * t_star);
    if arg > 1.0 && arg < 1.0 + 1e-12 {
        arg = 1.0;
    }
    if !(r > 0.0) || !(0.0..=1.0).contains(&arg) {
        return Err(Error::ScaleTooSmall { k, r, min });
    }
    let shift = arg.acos();
    let beta: Vec<f64> = (1..=m).map(|l| 2.0 * l as f64 * PI / m as f64).collect();
    let gamma = beta.iter().map(|b| b - shift).collect();
    Ok(DirectionScheme {
        k,
        r,
        alpha: Complex64::new(0.0, -(k as f64) * PI / t_star),
        beta,
        gamma,
    })
}

pub fn mode_scheme(k: usize, m: usize, t_star: f64, kappa: f64, grid: &Grid2D) -> Result<DirectionScheme> {
    mode_scheme_with_scale(k, m, mode_scale(k, t_star, kappa, grid), t_star, kappa)
}

pub fn make_mode_functions(
    k: usize,
    m: usize,
    t_star: f64,
    kappa: f64,
    grid: &Grid2D,
) -> Result<Vec<CgoFunction>> {
    Ok(mode_scheme(k, m, t_star, kappa, grid)?.functions(kappa))
}

/// Source-adapted directions `ρ_l = r s_l + i b_l` with `b_l` from
/// [`make_vector_b`] for frequency `α = −2kπi/T*`.
pub fn source_adapted_functions(
    positions: &[[f64; 2]],
    r: f64,
    k: usize,
    t_star: f64,
    kappa: f64,
) -> Result<Vec<CgoFunction>> {
    let kk = k as f64 / (kappa * t_star);
    positions
        .iter()
        .map(|s| {
            let a = [r * s[0], r * s[1]];
            let b = make_vector_b(a, kk)?;
            Ok(CgoFunction {
                alpha: Complex64::new(0.0, -2.0 * k as f64 * PI / t_star),
                rho: [Complex64::new(a[0], b[0]), Complex64::new(a[1], b[1])],
                kappa,
            })
        })
        .collect()
}
