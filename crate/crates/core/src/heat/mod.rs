//! Second-order 2D diffusion solver on a rectangle with Neumann boundaries.
//!
//! Space is discretized with the 5-point Laplacian and a ghost-node
//! Neumann closure, time with Crank–Nicolson and trapezoid loads:
//!
//! ```text
//! (I - κ dt/2 Δ_h) u^{n+1} = (I + κ dt/2 Δ_h) u^n + dt/2 (f^n + f^{n+1})
//! ```
//!
//! The ghost-node operator is diagonal in a tensor cosine basis, so each
//! step is solved exactly by modal multiplication. Point sources and
//! boundary fluxes are transformed through their sparse supports and the
//! trace is read back edge by edge, which keeps a step at `O(nx ny)`.
//!
//! `Δ_h` is self-adjoint in the trapezoid-weighted inner product, so a
//! backward flux solve paired with a forward solve satisfies the discrete
//! duality identity exactly under
//! [`BoundarySeries::staggered_inner`].

mod cn;
mod source;
mod trace;

pub(crate) use cn::{adjoint_on, Modal};
pub use cn::{
    solve_adjoint_backward, solve_forward, solve_with_boundary_flux, solve_count,
    ForwardSolution,
};
pub use source::{deposit_point_source, transform_to_heat, DiscreteSource, PointLoad, TransportParams};
pub use trace::{BoundarySeries, BoundaryFlux, BoundaryTrace, Edge, TraceHeader, TraceUnits};
pub(crate) use trace::same_times;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Uniform node-centred grid on `[0, lx] x [0, ly]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub lx: f64,
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Grid2D {
    pub fn new(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Self> {
        let grid = Grid2D { lx, ly, nx, ny };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 3 || self.ny < 3 {
            return Err(Error::InvalidGrid(format!(
                "need at least 3 nodes per axis, got {} x {}",
                self.nx, self.ny
            )));
        }
        if !(self.lx > 0.0 && self.ly > 0.0 && self.lx.is_finite() && self.ly.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "side lengths must be positive, got {} x {}",
                self.lx, self.ly
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn hx(&self) -> f64 {
        self.lx / (self.nx - 1) as f64
    }

    #[inline]
    pub fn hy(&self) -> f64 {
        self.ly / (self.ny - 1) as f64
    }

    /// Number of nodes.
    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major node index: `x` varies fastest.
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.hx()
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        j as f64 * self.hy()
    }

    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.nx - 1 || j == self.ny - 1
    }

    /// Diagonal length of the domain.
    pub fn diag(&self) -> f64 {
        self.lx.hypot(self.ly)
    }

    pub fn perimeter(&self) -> f64 {
        2.0 * (self.lx + self.ly)
    }

    pub fn contains_strictly(&self, p: [f64; 2]) -> bool {
        p[0] > 0.0 && p[0] < self.lx && p[1] > 0.0 && p[1] < self.ly
    }

    /// 1D trapezoid weight of node `i` among `n` nodes with spacing `h`.
    #[inline]
    pub(crate) fn trap_weight(i: usize, n: usize, h: f64) -> f64 {
        if i == 0 || i == n - 1 {
            0.5 * h
        } else {
            h
        }
    }

    /// Nodal control area (tensor trapezoid weight) of node `(i, j)`.
    #[inline]
    pub fn node_area(&self, i: usize, j: usize) -> f64 {
        Self::trap_weight(i, self.nx, self.hx()) * Self::trap_weight(j, self.ny, self.hy())
    }

    /// Trapezoid quadrature weights for every node, in node order.
    pub fn weights(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.len());
        for j in 0..self.ny {
            for i in 0..self.nx {
                w.push(self.node_area(i, j));
            }
        }
        w
    }
}

/// Time levels on `[0, T]`, split at the inactivity time `T*`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeMesh {
    pub t_star: f64,
    pub t_final: f64,
    pub nt_minus: usize,
    pub nt_plus: usize,
}

impl TimeMesh {
    pub fn new(t_star: f64, t_final: f64, nt_minus: usize, nt_plus: usize) -> Result<Self> {
        let mesh = TimeMesh {
            t_star,
            t_final,
            nt_minus,
            nt_plus,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_star > 0.0 && self.t_star < self.t_final && self.t_final.is_finite()) {
            return Err(Error::InvalidMesh(format!(
                "need 0 < T* < T, got T* = {}, T = {}",
                self.t_star, self.t_final
            )));
        }
        if self.nt_minus == 0 || self.nt_plus == 0 {
            return Err(Error::InvalidMesh(
                "both windows need at least one step".into(),
            ));
        }
        Ok(())
    }

    pub fn dt_minus(&self) -> f64 {
        self.t_star / self.nt_minus as f64
    }

    pub fn dt_plus(&self) -> f64 {
        (self.t_final - self.t_star) / self.nt_plus as f64
    }

    /// Total number of steps.
    pub fn steps(&self) -> usize {
        self.nt_minus + self.nt_plus
    }

    /// Number of time levels, `steps() + 1`.
    pub fn levels(&self) -> usize {
        self.steps() + 1
    }

    /// Level index of `T*`.
    pub fn star_level(&self) -> usize {
        self.nt_minus
    }

    pub fn time(&self, level: usize) -> f64 {
        if level <= self.nt_minus {
            level as f64 * self.dt_minus()
        } else if level == self.steps() {
            self.t_final
        } else {
            self.t_star + (level - self.nt_minus) as f64 * self.dt_plus()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.levels()).map(|n| self.time(n)).collect()
    }

    /// Times of the control window `[T*, T]`.
    pub fn plus_times(&self) -> Vec<f64> {
        (self.nt_minus..self.levels()).map(|n| self.time(n)).collect()
    }

    /// Size of step `n -> n + 1`.
    pub fn dt(&self, step: usize) -> f64 {
        if step < self.nt_minus {
            self.dt_minus()
        } else {
            self.dt_plus()
        }
    }
}

/// Nodal scalar field on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub grid: Grid2D,
    pub values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: Grid2D) -> Self {
        Field {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_values(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidParameter(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(Field { grid, values })
    }

    pub fn from_fn(grid: Grid2D, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                values.push(f(grid.x(i), grid.y(j)));
            }
        }
        Field { grid, values }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    /// Trapezoid integral over the domain.
    pub fn integrate(&self) -> f64 {
        let g = &self.grid;
        let mut sum = 0.0;
        for j in 0..g.ny {
            for i in 0..g.nx {
                sum += g.node_area(i, j) * self.values[g.index(i, j)];
            }
        }
        sum
    }

    /// Trapezoid-weighted inner product.
    pub fn dot(&self, other: &Field) -> f64 {
        let g = &self.grid;
        let mut sum = 0.0;
        for j in 0..g.ny {
            for i in 0..g.nx {
                let k = g.index(i, j);
                sum += g.node_area(i, j) * self.values[k] * other.values[k];
            }
        }
        sum
    }

    /// Trapezoid L2 norm.
    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
