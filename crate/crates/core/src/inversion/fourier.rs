//! Mode systems `A_k Λ_k = R_k` and the inverse Fourier transform.

use crate::cgo::{CgoFunction, MAX_EXPONENT};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Condition numbers above this are reported as ill-conditioned.
pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Clone, Debug)]
pub struct ModeSystem {
    pub k: usize,
    pub a: DMatrix<Complex64>,
    pub r: DVector<Complex64>,
}

/// `A[l][j] = e^{ρ_l·s_j}` with right-hand side `R(v_l)`.
pub fn assemble_mode_system(
    k: usize,
    functions: &[CgoFunction],
    positions: &[[f64; 2]],
    r_values: &[Complex64],
) -> Result<ModeSystem> {
    if functions.len() != r_values.len() {
        return Err(Error::InvalidParameter(format!(
            "{} test functions but {} values",
            functions.len(),
            r_values.len()
        )));
    }
    if functions.len() < positions.len() {
        return Err(Error::InvalidParameter(format!(
            "{} equations for {} sources",
            functions.len(),
            positions.len()
        )));
    }
    let mut a = DMatrix::zeros(functions.len(), positions.len());
    for (l, v) in functions.iter().enumerate() {
        for (j, s) in positions.iter().enumerate() {
            let z = v.rho[0] * s[0] + v.rho[1] * s[1];
            if z.re > MAX_EXPONENT {
                return Err(Error::EntryOverflow {
                    row: l,
                    col: j,
                    re: z.re,
                });
            }
            a[(l, j)] = z.exp();
        }
    }
    Ok(ModeSystem {
        k,
        a,
        r: DVector::from_column_slice(r_values),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierSolve {
    pub k: usize,
    pub lambda: Vec<Complex64>,
    /// `‖AΛ - R‖ / ‖R‖`.
    pub residual: f64,
    pub condition: f64,
    pub ill_conditioned: bool,
}

/// Least-squares solution of one mode system.
pub fn recover_fourier(system: &ModeSystem) -> Result<FourierSolve> {
    let m = system.a.ncols();
    if m == 0 {
        return Ok(FourierSolve {
            k: system.k,
            lambda: Vec::new(),
            residual: 0.0,
            condition: 1.0,
            ill_conditioned: false,
        });
    }
    let svd = system.a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let x = svd
        .solve(&system.r, smax * f64::EPSILON)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let rn = system.r.norm();
    let residual = if rn > 0.0 {
        (&system.a * &x - &system.r).norm() / rn
    } else {
        0.0
    };
    Ok(FourierSolve {
        k: system.k,
        lambda: x.iter().copied().collect(),
        residual,
        condition,
        ill_conditioned: !(condition <= CONDITION_LIMIT),
    })
}

/// Frequency used for mode `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frequency {
    /// `α = −kπi/T*`, the even extension of `g` to `[−T*, T*]`.
    Half,
    /// `α = −2kπi/T*`, the periodic extension of `g` on `[0, T*]`.
    Full,
}

impl Frequency {
    pub fn omega(self, k: usize, t_star: f64) -> f64 {
        match self {
            Frequency::Half => k as f64 * PI / t_star,
            Frequency::Full => 2.0 * k as f64 * PI / t_star,
        }
    }
}

/// `Λ_k` for `k = 0..=K`, one entry per source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierTable {
    pub t_star: f64,
    pub frequency: Frequency,
    pub modes: Vec<Vec<Complex64>>,
}

impl FourierTable {
    pub fn sources(&self) -> usize {
        self.modes.first().map_or(0, Vec::len)
    }
}

/// Truncated Fourier series of each `g_j` at `times`, negative values set to zero.
pub fn inverse_fourier_intensities(table: &FourierTable, times: &[f64]) -> Result<Vec<Vec<f64>>> {
    let m = table.sources();
    if table.modes.iter().any(|row| row.len() != m) {
        return Err(Error::InvalidParameter("ragged Fourier table".into()));
    }
    if !(table.t_star > 0.0) {
        return Err(Error::InvalidParameter("T* must be positive".into()));
    }
    let ts = table.t_star;
    Ok((0..m)
        .map(|j| {
            times
                .iter()
                .map(|&t| {
                    let mut g = table.modes[0][j].re / ts;
                    for (k, row) in table.modes.iter().enumerate().skip(1) {
                        let w = table.frequency.omega(k, ts) * t;
                        g += match table.frequency {
                            Frequency::Half => 2.0 / ts * row[j].re * w.cos(),
                            Frequency::Full => 2.0 / ts * (row[j] * Complex64::from_polar(1.0, w)).re,
                        };
                    }
                    g.max(0.0)
                })
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad;

    fn table_of(g: impl Fn(f64) -> f64, t_star: f64, kmax: usize, frequency: Frequency) -> FourierTable {
        let modes = (0..=kmax)
            .map(|k| {
                let w = frequency.omega(k, t_star);
                vec![quad::integrate_complex(0.0, t_star, 256, |t| g(t) * Complex64::from_polar(1.0, -w * t))]
            })
            .collect();
        FourierTable {
            t_star,
            frequency,
            modes,
        }
    }

    #[test]
    fn constant_from_zero_mode_only() {
        let t = FourierTable {
            t_star: 2.0,
            frequency: Frequency::Half,
            modes: vec![vec![Complex64::new(6.0, 0.0)]],
        };
        let g = inverse_fourier_intensities(&t, &[0.0, 0.7, 2.0]).unwrap();
        assert_eq!(g[0], vec![3.0, 3.0, 3.0]);
    }

    #[test]
    fn cosine_reproduced_by_half_frequency_modes() {
        let ts = 5.0;
        let g = |t: f64| 2.0 + (2.0 * PI * t / ts).cos();
        let table = table_of(g, ts, 4, Frequency::Half);
        let times = [0.0, 1.0, 2.5, 4.0, 5.0];
        let out = inverse_fourier_intensities(&table, &times).unwrap();
        for (t, v) in times.iter().zip(&out[0]) {
            assert!((g(*t) - v).abs() < 1e-9);
        }
    }

    #[test]
    fn full_frequency_reproduces_periodic_signal() {
        let ts = 3.0;
        let g = |t: f64| 1.0 + 0.5 * (2.0 * PI * t / ts).sin();
        let table = table_of(g, ts, 3, Frequency::Full);
        let out = inverse_fourier_intensities(&table, &[0.4, 1.9]).unwrap();
        assert!((out[0][0] - g(0.4)).abs() < 1e-9);
        assert!((out[0][1] - g(1.9)).abs() < 1e-9);
    }

    #[test]
    fn negative_values_are_truncated() {
        let t = FourierTable {
            t_star: 1.0,
            frequency: Frequency::Half,
            modes: vec![vec![Complex64::new(-1.0, 0.0)]],
        };
        assert_eq!(inverse_fourier_intensities(&t, &[0.5]).unwrap()[0][0], 0.0);
    }

    #[test]
    fn overflow_reports_entry() {
        let v = CgoFunction {
            alpha: Complex64::new(0.0, 0.0),
            rho: [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)],
            kappa: 1.0,
        };
        let err = assemble_mode_system(0, &[v], &[[800.0, 1.0]], &[Complex64::new(1.0, 0.0)]).unwrap_err();
        assert!(matches!(err, Error::EntryOverflow { row: 0, col: 0, .. }));
    }

    #[test]
    fn square_system_recovered_exactly() {
        let fs: Vec<CgoFunction> = (0..3)
            .map(|l| {
                let b = l as f64;
                CgoFunction {
                    alpha: Complex64::new(0.0, 0.0),
                    rho: [Complex64::new(b.cos(), b.sin()), Complex64::new(b.sin(), -b.cos())],
                    kappa: 1.0,
                }
            })
            .collect();
        let s = [[0.2, 0.3], [0.7, 0.1], [0.4, 0.9]];
        let truth = [Complex64::new(1.0, 0.5), Complex64::new(2.0, 0.0), Complex64::new(0.3, -1.0)];
        let a = DMatrix::from_fn(3, 3, |l, j| (fs[l].rho[0] * s[j][0] + fs[l].rho[1] * s[j][1]).exp());
        let r = &a * DVector::from_column_slice(&truth);
        let sys = assemble_mode_system(1, &fs, &s, r.as_slice()).unwrap();
        let sol = recover_fourier(&sys).unwrap();
        for (x, y) in sol.lambda.iter().zip(&truth) {
            assert!((x - y).norm() < 1e-10);
        }
        assert!(sol.residual < 1e-12);
    }
}
