//! Gershgorin localization and the stability constant of `A_k`.

use crate::cgo::{source_adapted_functions, CgoFunction};
use crate::error::{Error, Result};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Closed disc `{z : |z - center| <= radius}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Complex64,
    pub radius: f64,
}

impl Ball {
    pub fn contains(&self, z: Complex64) -> bool {
        (z - self.center).norm() <= self.radius * (1.0 + 1e-12) + 1e-300
    }

    /// Distance from the origin to the disc, zero if it covers the origin.
    pub fn distance_from_origin(&self) -> f64 {
        (self.center.norm() - self.radius).max(0.0)
    }
}

/// Weighted column discs of `A`: centre `a_jj`, radius `p_j Σ_{l≠j} |a_lj| / p_l`.
pub fn gershgorin_balls(a: &DMatrix<Complex64>, p: &[f64]) -> Result<Vec<Ball>> {
    let m = a.ncols();
    if a.nrows() != m || p.len() != m {
        return Err(Error::InvalidParameter(format!(
            "need a square matrix and {} weights, got {}x{} and {}",
            m,
            a.nrows(),
            m,
            p.len()
        )));
    }
    if p.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(Error::InvalidParameter("weights must be positive".into()));
    }
    Ok((0..m)
        .map(|j| {
            let radius = (0..m)
                .filter(|&l| l != j)
                .map(|l| a[(l, j)].norm() / p[l])
                .sum::<f64>()
                * p[j];
            Ball {
                center: a[(j, j)],
                radius,
            }
        })
        .collect())
}

pub fn in_union(balls: &[Ball], z: Complex64) -> bool {
    balls.iter().any(|b| b.contains(z))
}

/// `C(m; δ, r) = 1 - (m - 1) e^{-rδ²/2}`, the lower bound on `|eig A_k|`.
pub fn stability_constant(m: usize, delta: f64, r: f64) -> Result<f64> {
    if m == 0 || !(delta >= 0.0) || !(r > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "stability constant needs m >= 1, δ >= 0 and r > 0, got {m}, {delta}, {r}"
        )));
    }
    let c = 1.0 - (m as f64 - 1.0) * (-r * delta * delta / 2.0).exp();
    if c <= 0.0 {
        return Err(Error::VacuousBound(c));
    }
    Ok(c)
}

/// Smallest pairwise distance, infinite for fewer than two points.
pub fn min_pairwise_distance(positions: &[[f64; 2]]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a) in positions.iter().enumerate() {
        for b in &positions[i + 1..] {
            best = best.min((a[0] - b[0]).hypot(a[1] - b[1]));
        }
    }
    best
}

/// `A_k[l][j] = e^{ρ_l·s_j}`.
pub fn mode_matrix(functions: &[CgoFunction], positions: &[[f64; 2]]) -> DMatrix<Complex64> {
    DMatrix::from_fn(functions.len(), positions.len(), |l, j| {
        let v = &functions[l];
        (v.rho[0] * positions[j][0] + v.rho[1] * positions[j][1]).exp()
    })
}

/// Spectral diagnostics of the source-adapted `A_k`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StabilityReport {
    pub k: usize,
    pub r: f64,
    pub delta: f64,
    /// `None` when the bound is vacuous.
    pub constant: Option<f64>,
    pub balls: Vec<Ball>,
    pub eigenvalues: Vec<Complex64>,
    pub min_abs_eigenvalue: f64,
    pub min_diagonal: f64,
    /// `max |A - A^H|` relative to `max |A|`.
    pub hermitian_defect: f64,
    pub eigenvalues_in_union: bool,
}

/// Builds `A_k` from source-adapted directions and checks the theorem.
pub fn stability_report(
    positions: &[[f64; 2]],
    r: f64,
    k: usize,
    t_star: f64,
    kappa: f64,
) -> Result<StabilityReport> {
    let m = positions.len();
    if m == 0 {
        return Err(Error::InvalidParameter("no positions".into()));
    }
    let functions = source_adapted_functions(positions, r, k, t_star, kappa)?;
    let a = mode_matrix(&functions, positions);
    let p: Vec<f64> = positions
        .iter()
        .map(|s| (0.5 * r * (s[0] * s[0] + s[1] * s[1])).exp())
        .collect();
    let balls = gershgorin_balls(&a, &p)?;
    let eigenvalues: Vec<Complex64> = a
        .clone()
        .schur()
        .eigenvalues()
        .map(|e| e.iter().copied().collect())
        .unwrap_or_default();
    let min_abs_eigenvalue = eigenvalues.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
    let min_diagonal = (0..m).map(|j| a[(j, j)].norm()).fold(f64::INFINITY, f64::min);
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let hermitian_defect = (&a - a.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max) / scale;
    let delta = min_pairwise_distance(positions);
    let constant = stability_constant(m, if delta.is_finite() { delta } else { 0.0 }, r).ok();
    let eigenvalues_in_union = eigenvalues.iter().all(|&z| in_union(&balls, z));
    Ok(StabilityReport {
        k,
        r,
        delta,
        constant,
        balls,
        eigenvalues,
        min_abs_eigenvalue,
        min_diagonal,
        hermitian_defect,
        eigenvalues_in_union,
    })
}
