use super::trace::same_times;
use super::{BoundaryFlux, BoundarySeries, BoundaryTrace, DiscreteSource, Edge, Field, Grid2D, TimeMesh};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;
use std::sync::atomic::{AtomicUsize, Ordering};

static SOLVES: AtomicUsize = AtomicUsize::new(0);

/// Number of PDE solves started by this process.
pub fn solve_count() -> usize {
    SOLVES.load(Ordering::Relaxed)
}

/// Output of a forward solve.
#[derive(Clone, Debug)]
pub struct ForwardSolution {
    pub trace: BoundaryTrace,
    pub at_t_star: Field,
    pub at_final: Field,
}

/// Eigenpairs of the 1D ghost-node Neumann second difference on `n` nodes.
///
/// Column `k` of `s` is `cos(πki/(n-1))`, normalized in the trapezoid inner
/// product, with eigenvalue `-(4/h²) sin²(πk/(2(n-1)))`.
#[derive(Clone, Debug)]
pub(crate) struct Modes1D {
    /// `s[(i, k)]`.
    pub s: DMatrix<f64>,
    /// `a = sᵀ W`, the inverse of `s`.
    pub a: DMatrix<f64>,
    pub lambda: Vec<f64>,
}

impl Modes1D {
    pub fn new(n: usize, h: f64) -> Self {
        let m = (n - 1) as f64;
        let len = m * h;
        let mut s = DMatrix::zeros(n, n);
        let mut a = DMatrix::zeros(n, n);
        let mut lambda = Vec::with_capacity(n);
        for k in 0..n {
            let norm = if k == 0 || k == n - 1 { len } else { 0.5 * len };
            let c = 1.0 / norm.sqrt();
            for i in 0..n {
                let v = c * (PI * ((k * i) % (2 * (n - 1))) as f64 / m).cos();
                s[(i, k)] = v;
                a[(k, i)] = v * Grid2D::trap_weight(i, n, h);
            }
            let sn = (0.5 * PI * k as f64 / m).sin();
            lambda.push(-4.0 * sn * sn / (h * h));
        }
        Modes1D { s, a, lambda }
    }
}

/// Tensor-product modal representation on a grid.
///
/// A nodal field `u` maps to coefficients `û = A_x U A_yᵀ`, with `U[(i, j)]`
/// the value at node `(i, j)`, and back through `U = S_x û S_yᵀ`.
#[derive(Clone, Debug)]
pub(crate) struct Modal {
    pub grid: Grid2D,
    pub x: Modes1D,
    pub y: Modes1D,
}

impl Modal {
    pub fn new(grid: &Grid2D) -> Self {
        Modal {
            grid: *grid,
            x: Modes1D::new(grid.nx, grid.hx()),
            y: Modes1D::new(grid.ny, grid.hy()),
        }
    }

    pub fn zeros(&self) -> DMatrix<f64> {
        DMatrix::zeros(self.grid.nx, self.grid.ny)
    }

    #[cfg(test)]
    pub fn to_modal(&self, values: &[f64]) -> DMatrix<f64> {
        let u = DMatrix::from_column_slice(self.grid.nx, self.grid.ny, values);
        &self.x.a * u * self.y.a.transpose()
    }

    pub fn to_nodal(&self, c: &DMatrix<f64>) -> Vec<f64> {
        let u = &self.x.s * c * self.y.s.transpose();
        u.as_slice().to_vec()
    }

    /// `û += scale · A_x e_i ⊗ A_y e_j`, a unit load at node `(i, j)`.
    pub fn add_node(&self, c: &mut DMatrix<f64>, i: usize, j: usize, scale: f64) {
        let ax = self.x.a.column(i);
        let ay = self.y.a.column(j);
        c.ger(scale, &ax, &ay, 1.0);
    }

    /// Adds nodal values `f` supported on one edge.
    pub fn add_edge(&self, c: &mut DMatrix<f64>, edge: Edge, f: &[f64]) {
        let f = DVector::from_column_slice(f);
        match edge {
            Edge::South | Edge::North => {
                let j = if edge == Edge::South { 0 } else { self.grid.ny - 1 };
                let along = &self.x.a * f;
                c.ger(1.0, &along, &self.y.a.column(j), 1.0);
            }
            Edge::West | Edge::East => {
                let i = if edge == Edge::West { 0 } else { self.grid.nx - 1 };
                let along = &self.y.a * f;
                c.ger(1.0, &self.x.a.column(i), &along, 1.0);
            }
        }
    }

    /// Nodal values of `c` along one edge.
    pub fn edge_values(&self, c: &DMatrix<f64>, edge: Edge) -> DVector<f64> {
        match edge {
            Edge::South | Edge::North => {
                let j = if edge == Edge::South { 0 } else { self.grid.ny - 1 };
                let row = self.y.s.row(j).transpose();
                &self.x.s * (c * row)
            }
            Edge::West | Edge::East => {
                let i = if edge == Edge::West { 0 } else { self.grid.nx - 1 };
                let row = self.x.s.row(i).transpose();
                &self.y.s * (c.transpose() * row)
            }
        }
    }
}

/// Crank–Nicolson multipliers for one step size:
/// `û ← g ∘ û + (dt/2) h ∘ (f̂ⁿ + f̂ⁿ⁺¹)`.
#[derive(Clone, Debug)]
struct CnStep {
    dt: f64,
    g: DMatrix<f64>,
    h: DMatrix<f64>,
}

impl CnStep {
    fn new(modal: &Modal, kappa: f64, dt: f64) -> Self {
        let (nx, ny) = (modal.grid.nx, modal.grid.ny);
        let c = 0.5 * dt * kappa;
        let h = DMatrix::from_fn(nx, ny, |k, l| {
            1.0 / (1.0 - c * (modal.x.lambda[k] + modal.y.lambda[l]))
        });
        let g = DMatrix::from_fn(nx, ny, |k, l| {
            (1.0 + c * (modal.x.lambda[k] + modal.y.lambda[l])) * h[(k, l)]
        });
        CnStep { dt, g, h }
    }
}

/// Marches `u_t = κΔu + f` from `u = 0` over the given levels in modal
/// coordinates.
///
/// `load(level, f̂)` adds the transformed load at a level to a zeroed
/// buffer; `observe` sees the modal state at every level. Steps starting
/// at level `off` or later carry no load, so a source that switches off
/// at that level leaves no trace of its left-limit value afterwards.
fn march(
    modal: &Modal,
    kappa: f64,
    times: &[f64],
    off: Option<usize>,
    mut load: impl FnMut(usize, &mut DMatrix<f64>),
    mut observe: impl FnMut(usize, &DMatrix<f64>),
) -> Result<DMatrix<f64>> {
    if !(kappa > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "diffusivity must be positive, got {kappa}"
        )));
    }
    SOLVES.fetch_add(1, Ordering::Relaxed);
    let mut u = modal.zeros();
    let mut f_prev = modal.zeros();
    let mut f_next = modal.zeros();
    let mut steppers: Vec<CnStep> = Vec::new();
    load(0, &mut f_prev);
    observe(0, &u);
    for n in 0..times.len().saturating_sub(1) {
        let dt = times[n + 1] - times[n];
        if !(dt > 0.0) {
            return Err(Error::InvalidMesh(format!(
                "time levels must increase, step {n} has dt = {dt}"
            )));
        }
        let idx = match steppers.iter().position(|s| (s.dt - dt).abs() <= 1e-12 * dt) {
            Some(i) => i,
            None => {
                steppers.push(CnStep::new(modal, kappa, dt));
                steppers.len() - 1
            }
        };
        let step = &steppers[idx];
        f_next.fill(0.0);
        match off {
            Some(k) if n >= k => f_prev.fill(0.0),
            _ => load(n + 1, &mut f_next),
        }
        let half = 0.5 * dt;
        for (((v, g), h), (a, b)) in u
            .iter_mut()
            .zip(step.g.iter())
            .zip(step.h.iter())
            .zip(f_prev.iter().zip(f_next.iter()))
        {
            *v = g * *v + half * h * (a + b);
        }
        if !u.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                step: n + 1,
                t: times[n + 1],
            });
        }
        std::mem::swap(&mut f_prev, &mut f_next);
        observe(n + 1, &u);
    }
    Ok(u)
}

fn record_edges(modal: &Modal, trace: &mut BoundarySeries, n: usize, c: &DMatrix<f64>) {
    for e in Edge::ALL {
        let vals = modal.edge_values(c, e);
        for (s, v) in vals.iter().enumerate() {
            trace.set(e, s, n, *v);
        }
    }
}

/// Forward problem: zero initial state, homogeneous Neumann boundary,
/// point-source load. Returns the boundary trace at every level and the
/// interior snapshots at `T*` and `T`.
pub fn solve_forward(
    grid: &Grid2D,
    mesh: &TimeMesh,
    kappa: f64,
    source: &DiscreteSource,
) -> Result<ForwardSolution> {
    if source.grid() != grid {
        return Err(Error::MeshMismatch("source was deposited on another grid".into()));
    }
    if source.levels() != mesh.levels() {
        return Err(Error::MeshMismatch(format!(
            "source has {} levels, mesh has {}",
            source.levels(),
            mesh.levels()
        )));
    }
    let modal = Modal::new(grid);
    let shapes: Vec<DMatrix<f64>> = source
        .loads()
        .iter()
        .map(|load| {
            let mut c = modal.zeros();
            for &(k, w) in &load.nodes {
                modal.add_node(&mut c, k % grid.nx, k / grid.nx, w);
            }
            c
        })
        .collect();
    let times = mesh.times();
    let star = mesh.star_level();
    let mut trace = BoundarySeries::zeros(*grid, times.clone());
    let mut at_star = None;
    let final_state = march(
        &modal,
        kappa,
        &times,
        Some(star),
        |n, f| {
            for (load, shape) in source.loads().iter().zip(&shapes) {
                let g = load.samples[n];
                if g != 0.0 {
                    *f += shape * g;
                }
            }
        },
        |n, c| {
            record_edges(&modal, &mut trace, n, c);
            if n == star {
                at_star = Some(modal.to_nodal(c));
            }
        },
    )?;
    Ok(ForwardSolution {
        trace,
        at_t_star: Field {
            grid: *grid,
            values: at_star.unwrap_or_else(|| vec![0.0; grid.len()]),
        },
        at_final: Field {
            grid: *grid,
            values: modal.to_nodal(&final_state),
        },
    })
}

/// Forward heat solve from a zero state with inhomogeneous Neumann data
/// `κ ∂u/∂n = flux` sampled at `flux.times()`; returns the final state.
pub fn solve_with_boundary_flux(grid: &Grid2D, kappa: f64, flux: &BoundarySeries) -> Result<Field> {
    let modal = Modal::new(grid);
    solve_flux_on(&modal, kappa, flux)
}

pub(crate) fn solve_flux_on(modal: &Modal, kappa: f64, flux: &BoundarySeries) -> Result<Field> {
    let grid = modal.grid;
    if flux.grid() != &grid {
        return Err(Error::MeshMismatch("flux is sampled on another grid".into()));
    }
    let times = flux.times().to_vec();
    let mut buf = Vec::new();
    let state = march(
        modal,
        kappa,
        &times,
        None,
        |n, f| {
            // Ghost-node closure: flux enters boundary rows as 2ω/h_normal.
            for e in Edge::ALL {
                let c = 2.0 / e.normal_spacing(&grid);
                buf.clear();
                buf.extend((0..e.len(&grid)).map(|s| c * flux.get(e, s, n)));
                if buf.iter().any(|v| *v != 0.0) {
                    modal.add_edge(f, e, &buf);
                }
            }
        },
        |_, _| {},
    )?;
    Ok(Field {
        grid,
        values: modal.to_nodal(&state),
    })
}

/// Backward adjoint problem on `Q⁺`:
/// `∂_t ψ + κΔψ = 0`, `κ ∂ψ/∂n = flux`, `ψ(T) = 0`. Returns `ψ(T*)`.
///
/// With `τ = T - t` this is a forward heat equation with Neumann data, so
/// the flux is reversed in time and handed to [`solve_with_boundary_flux`].
pub fn solve_adjoint_backward(
    grid: &Grid2D,
    mesh: &TimeMesh,
    kappa: f64,
    flux: &BoundaryFlux,
) -> Result<Field> {
    check_plus_levels(mesh, flux)?;
    solve_with_boundary_flux(grid, kappa, &reverse_in_time(flux, mesh.t_final))
}

pub(crate) fn adjoint_on(modal: &Modal, mesh: &TimeMesh, kappa: f64, flux: &BoundaryFlux) -> Result<Field> {
    check_plus_levels(mesh, flux)?;
    solve_flux_on(modal, kappa, &reverse_in_time(flux, mesh.t_final))
}

fn check_plus_levels(mesh: &TimeMesh, flux: &BoundaryFlux) -> Result<()> {
    if !same_times(flux.times(), &mesh.plus_times()) {
        return Err(Error::MeshMismatch(format!(
            "flux has {} levels, expected the {} levels of [T*, T]",
            flux.n_times(),
            mesh.nt_plus + 1
        )));
    }
    Ok(())
}

/// Re-indexes a series on `[T*, T]` by `τ = T - t`.
pub(crate) fn reverse_in_time(flux: &BoundarySeries, t_final: f64) -> BoundarySeries {
    let nt = flux.n_times();
    let tau: Vec<f64> = flux.times().iter().rev().map(|t| t_final - t).collect();
    let mut out = BoundarySeries::zeros(*flux.grid(), tau);
    let grid = *flux.grid();
    for e in Edge::ALL {
        for s in 0..e.len(&grid) {
            for m in 0..nt {
                out.set(e, s, m, flux.get(e, s, nt - 1 - m));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heat::deposit_point_source;

    fn small() -> (Grid2D, TimeMesh) {
        (
            Grid2D::new(50.0, 40.0, 26, 21).unwrap(),
            TimeMesh::new(60.0, 80.0, 30, 10).unwrap(),
        )
    }

    fn neumann_second_difference(x: &[f64], h: f64) -> Vec<f64> {
        let n = x.len();
        (0..n)
            .map(|i| {
                let l = if i == 0 { 1 } else { i - 1 };
                let r = if i == n - 1 { n - 2 } else { i + 1 };
                (x[l] + x[r] - 2.0 * x[i]) / (h * h)
            })
            .collect()
    }

    #[test]
    fn modes_diagonalize_ghost_node_operator() {
        let (n, h) = (9, 0.3);
        let m = Modes1D::new(n, h);
        for k in 0..n {
            let col: Vec<f64> = m.s.column(k).iter().copied().collect();
            let lc = neumann_second_difference(&col, h);
            for i in 0..n {
                assert!((lc[i] - m.lambda[k] * col[i]).abs() < 1e-11, "k={k} i={i}");
            }
        }
        let id = &m.a * &m.s;
        assert!((id - DMatrix::identity(n, n)).amax() < 1e-13);
    }

    #[test]
    fn modal_round_trip_and_edges() {
        let g = Grid2D::new(3.0, 2.0, 7, 5).unwrap();
        let modal = Modal::new(&g);
        let u: Vec<f64> = (0..g.len()).map(|k| (k as f64 * 0.37).sin()).collect();
        let c = modal.to_modal(&u);
        let back = modal.to_nodal(&c);
        for (a, b) in u.iter().zip(&back) {
            assert!((a - b).abs() < 1e-13);
        }
        for e in Edge::ALL {
            let vals = modal.edge_values(&c, e);
            for s in 0..e.len(&g) {
                let (i, j) = e.node(&g, s);
                assert!((vals[s] - u[g.index(i, j)]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn edge_load_matches_nodal_transform() {
        let g = Grid2D::new(3.0, 2.0, 7, 5).unwrap();
        let modal = Modal::new(&g);
        for e in Edge::ALL {
            let f: Vec<f64> = (0..e.len(&g)).map(|s| 1.0 + s as f64).collect();
            let mut nodal = vec![0.0; g.len()];
            for (s, v) in f.iter().enumerate() {
                let (i, j) = e.node(&g, s);
                nodal[g.index(i, j)] = *v;
            }
            let mut c = modal.zeros();
            modal.add_edge(&mut c, e, &f);
            assert!((c - modal.to_modal(&nodal)).amax() < 1e-12);
        }
    }

    #[test]
    fn zero_source_stays_zero_at_every_level() {
        let (g, m) = small();
        let src = DiscreteSource::empty(g, m.levels());
        let sol = solve_forward(&g, &m, 1.0, &src).unwrap();
        assert!(sol.trace.values().all(|&v| v == 0.0));
        assert!(sol.at_final.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn per_step_mass_balance_holds() {
        let (g, m) = small();
        let times = m.times();
        let samples: Vec<f64> = times.iter().map(|t| 1.0 + (t / 7.0).sin()).collect();
        let src = deposit_point_source(&g, [13.3, 21.7], &samples).unwrap();
        let modal = Modal::new(&g);
        // ∫u = û₀₀ √(lx ly) because the constant mode is 1/√(lx ly).
        let scale = (g.lx * g.ly).sqrt();
        let shape = {
            let mut c = modal.zeros();
            for &(k, w) in &src.loads()[0].nodes {
                modal.add_node(&mut c, k % g.nx, k / g.nx, w);
            }
            c
        };
        let mut masses = Vec::new();
        march(
            &modal,
            0.9,
            &times,
            None,
            |n, f| *f += &shape * samples[n],
            |_, c| masses.push(c[(0, 0)] * scale),
        )
        .unwrap();
        for n in 0..times.len() - 1 {
            let dt = times[n + 1] - times[n];
            let inflow = 0.5 * dt * (samples[n] + samples[n + 1]);
            let got = masses[n + 1] - masses[n];
            assert!((got - inflow).abs() <= 1e-10 * inflow.abs().max(masses[n + 1]));
        }
    }

    #[test]
    fn nonfinite_source_aborts() {
        let (g, m) = small();
        let mut samples = vec![0.0; m.levels()];
        samples[5] = f64::NAN;
        let src = deposit_point_source(&g, [10.0, 10.0], &samples).unwrap();
        assert!(matches!(
            solve_forward(&g, &m, 1.0, &src),
            Err(Error::NonFinite { step: 5, .. })
        ));
    }

    #[test]
    fn adjoint_rejects_mismatched_flux_levels() {
        let (g, m) = small();
        let flux = BoundarySeries::zeros(g, m.times());
        assert!(matches!(
            solve_adjoint_backward(&g, &m, 1.0, &flux),
            Err(Error::MeshMismatch(_))
        ));
    }
}
