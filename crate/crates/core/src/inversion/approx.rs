//! Intensities as combinations of a trigonometric basis, fitted to the
//! measured trace through one forward solve per basis function and source.

use crate::error::{Error, Result};
use crate::heat::{deposit_point_source, solve_forward, BoundaryTrace, Edge, Grid2D, TimeMesh};
use crate::lsqr::{lsqr, DenseOperator, LsqrOptions};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// `h_0 = 1`, `h_{2l-1} = sin(lπt/T*)`, `h_{2l} = cos(lπt/T*)` for `l = 1..=L`.
pub fn intensity_basis(l_max: usize, t: f64, t_star: f64) -> Vec<f64> {
    let mut h = Vec::with_capacity(2 * l_max + 1);
    h.push(1.0);
    for l in 1..=l_max {
        let w = l as f64 * PI * t / t_star;
        h.push(w.sin());
        h.push(w.cos());
    }
    h
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproxResult {
    /// `coefficients[j][i]` multiplies `h_i` for source `j`.
    pub coefficients: Vec<Vec<f64>>,
    pub times: Vec<f64>,
    /// Reconstructed `g_j` at `times`, negative values set to zero.
    pub intensities: Vec<Vec<f64>>,
    /// `‖Σ b φ - φ_meas‖ / ‖φ_meas‖` in `L²(Σ)`.
    pub relative_residual: f64,
    pub iterations: usize,
}

/// Least-squares fit of `(2L + 1) m` basis traces to `trace`.
pub fn approximate_intensities(
    positions: &[[f64; 2]],
    trace: &BoundaryTrace,
    grid: &Grid2D,
    mesh: &TimeMesh,
    kappa: f64,
    l_max: usize,
    times: &[f64],
) -> Result<ApproxResult> {
    let m = positions.len();
    for i in 0..m {
        for j in i + 1..m {
            let (a, b) = (positions[i], positions[j]);
            if (a[0] - b[0]).hypot(a[1] - b[1]) <= 1e-9 * grid.diag() {
                return Err(Error::DegenerateBasis(i, j));
            }
        }
    }
    let mesh_times = mesh.times();
    if trace.grid() != grid || trace.times().len() != mesh_times.len() {
        return Err(Error::MeshMismatch("trace does not match the grid and mesh".into()));
    }
    let nb = 2 * l_max + 1;
    let samples: Vec<Vec<f64>> = mesh_times
        .iter()
        .map(|&t| {
            if t <= mesh.t_star * (1.0 + 1e-12) {
                intensity_basis(l_max, t, mesh.t_star)
            } else {
                vec![0.0; nb]
            }
        })
        .collect();
    let weights = sqrt_weights(trace);
    let rows = weights.len();
    let columns: Vec<Vec<f64>> = (0..m * nb)
        .into_par_iter()
        .map(|c| {
            let (j, i) = (c / nb, c % nb);
            let g: Vec<f64> = samples.iter().map(|h| h[i]).collect();
            let src = deposit_point_source(grid, positions[j], &g)?;
            let sol = solve_forward(grid, mesh, kappa, &src)?;
            Ok(flatten(&sol.trace, &weights))
        })
        .collect::<Result<_>>()?;
    let data: Vec<f64> = columns.into_iter().flatten().collect();
    let b = flatten(trace, &weights);
    let op = DenseOperator {
        rows,
        cols: m * nb,
        data: &data,
    };
    let sol = lsqr(&op, &b, &LsqrOptions::default());
    let mut fitted = vec![0.0; rows];
    crate::lsqr::LinearOperator::apply(&op, &sol.x, &mut fitted);
    let bn = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let rn = fitted.iter().zip(&b).map(|(f, y)| (f - y) * (f - y)).sum::<f64>().sqrt();
    let coefficients: Vec<Vec<f64>> = sol.x.chunks(nb).map(<[f64]>::to_vec).collect();
    let intensities = coefficients
        .iter()
        .map(|c| {
            times
                .iter()
                .map(|&t| {
                    let h = intensity_basis(l_max, t, mesh.t_star);
                    h.iter().zip(c).map(|(a, b)| a * b).sum::<f64>().max(0.0)
                })
                .collect()
        })
        .collect();
    Ok(ApproxResult {
        coefficients,
        times: times.to_vec(),
        intensities,
        relative_residual: if bn > 0.0 { rn / bn } else { 0.0 },
        iterations: sol.iterations,
    })
}

/// `√(arc weight × time weight)` in edge, node, level order.
fn sqrt_weights(trace: &BoundaryTrace) -> Vec<f64> {
    let grid = trace.grid();
    let wt = trace.time_weights();
    let mut out = Vec::new();
    for e in Edge::ALL {
        for s in 0..e.len(grid) {
            let ws = e.arc_weight(grid, s);
            out.extend(wt.iter().map(|w| (ws * w).sqrt()));
        }
    }
    out
}

fn flatten(trace: &BoundaryTrace, weights: &[f64]) -> Vec<f64> {
    Edge::ALL
        .iter()
        .flat_map(|&e| trace.edge_data(e).iter().copied())
        .zip(weights)
        .map(|(v, w)| v * w)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::uniform_times;

    #[test]
    fn basis_ordering() {
        let h = intensity_basis(2, 0.25, 1.0);
        assert_eq!(h.len(), 5);
        assert_eq!(h[0], 1.0);
        assert!((h[1] - (PI / 4.0).sin()).abs() < 1e-15);
        assert!((h[4] - (PI / 2.0).cos()).abs() < 1e-15);
    }

    #[test]
    fn coincident_positions_are_rejected() {
        let grid = Grid2D::new(1.0, 1.0, 11, 11).unwrap();
        let mesh = TimeMesh::new(1.0, 1.5, 10, 5).unwrap();
        let trace = BoundaryTrace::zeros(grid, mesh.times());
        let err = approximate_intensities(&[[0.3, 0.3], [0.3, 0.3]], &trace, &grid, &mesh, 1.0, 1, &[0.0]).unwrap_err();
        assert!(matches!(err, Error::DegenerateBasis(0, 1)));
    }

    #[test]
    fn in_span_intensity_is_recovered() {
        let grid = Grid2D::new(1.0, 1.0, 21, 21).unwrap();
        let mesh = TimeMesh::new(0.2, 0.25, 40, 10).unwrap();
        let pos = [[0.3, 0.4], [0.7, 0.6]];
        let coef = [[1.0, 0.3, -0.2], [0.5, 0.0, 0.4]];
        let mut src = crate::heat::DiscreteSource::empty(grid, mesh.levels());
        for (p, c) in pos.iter().zip(&coef) {
            let g: Vec<f64> = mesh
                .times()
                .iter()
                .map(|&t| {
                    if t <= mesh.t_star {
                        intensity_basis(1, t, mesh.t_star).iter().zip(c).map(|(a, b)| a * b).sum()
                    } else {
                        0.0
                    }
                })
                .collect();
            src.extend(deposit_point_source(&grid, *p, &g).unwrap()).unwrap();
        }
        let trace = solve_forward(&grid, &mesh, 1.0, &src).unwrap().trace;
        let out = approximate_intensities(&pos, &trace, &grid, &mesh, 1.0, 1, &uniform_times(mesh.t_star, 11)).unwrap();
        for (got, want) in out.coefficients.iter().zip(&coef) {
            for (a, b) in got.iter().zip(want) {
                assert!((a - b).abs() < 1e-3, "{got:?} vs {want:?}");
            }
        }
        assert!(out.relative_residual < 1e-6);
    }
}
