use super::{Grid2D, TimeMesh};
use crate::error::{Error, Result};
use crate::source::{Intensity, PointSource, SourceSet};
use serde::{Deserialize, Serialize};

/// One deposited point source: nodal weights (already divided by the
/// nodal control area) and its intensity at every time level.
#[derive(Clone, Debug, PartialEq)]
pub struct PointLoad {
    pub nodes: Vec<(usize, f64)>,
    pub samples: Vec<f64>,
}

/// Nodal load `Σ_j g_j(t) δ(x - s_j)` after deposition, per time level.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSource {
    grid: Grid2D,
    levels: usize,
    loads: Vec<PointLoad>,
}

impl DiscreteSource {
    /// A source with no loads.
    pub fn empty(grid: Grid2D, levels: usize) -> Self {
        DiscreteSource {
            grid,
            levels,
            loads: Vec::new(),
        }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn loads(&self) -> &[PointLoad] {
        &self.loads
    }

    /// Merges the loads of another source sampled on the same levels.
    pub fn extend(&mut self, other: DiscreteSource) -> Result<()> {
        if other.grid != self.grid || other.levels != self.levels {
            return Err(Error::MeshMismatch(
                "cannot combine sources on different grids or time levels".into(),
            ));
        }
        self.loads.extend(other.loads);
        Ok(())
    }

    /// `u += scale * f(level)`.
    #[inline]
    pub(crate) fn add_to(&self, level: usize, scale: f64, u: &mut [f64]) {
        for load in &self.loads {
            let g = load.samples[level];
            if g != 0.0 {
                for &(k, w) in &load.nodes {
                    u[k] += scale * g * w;
                }
            }
        }
    }

    /// Dense nodal load vector at one time level.
    pub fn load_at(&self, level: usize) -> Vec<f64> {
        let mut u = vec![0.0; self.grid.len()];
        self.add_to(level, 1.0, &mut u);
        u
    }

    /// Trapezoid integral of the load over the domain at one level.
    pub fn total_mass(&self, level: usize) -> f64 {
        let w = self.grid.weights();
        self.load_at(level).iter().zip(&w).map(|(f, a)| f * a).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.loads.iter().all(|l| l.samples.iter().all(|&g| g == 0.0))
    }
}

/// Bilinear deposition of a point source onto the four enclosing nodes.
///
/// Each weight is divided by the node's control area so the trapezoid
/// integral of the load equals the intensity at every level.
pub fn deposit_point_source(
    grid: &Grid2D,
    position: [f64; 2],
    intensity_samples: &[f64],
) -> Result<DiscreteSource> {
    if !grid.contains_strictly(position) {
        return Err(Error::SourceOutsideDomain {
            x: position[0],
            y: position[1],
        });
    }
    let (i0, fx) = cell_coordinate(position[0], grid.hx(), grid.nx);
    let (j0, fy) = cell_coordinate(position[1], grid.hy(), grid.ny);
    let mut nodes = Vec::with_capacity(4);
    for (di, wx) in [(0, 1.0 - fx), (1, fx)] {
        for (dj, wy) in [(0, 1.0 - fy), (1, fy)] {
            let w = wx * wy;
            if w != 0.0 {
                let (i, j) = (i0 + di, j0 + dj);
                nodes.push((grid.index(i, j), w / grid.node_area(i, j)));
            }
        }
    }
    Ok(DiscreteSource {
        grid: *grid,
        levels: intensity_samples.len(),
        loads: vec![PointLoad {
            nodes,
            samples: intensity_samples.to_vec(),
        }],
    })
}

/// Lower node index of the enclosing cell and the fractional offset.
fn cell_coordinate(x: f64, h: f64, n: usize) -> (usize, f64) {
    let r = x / h;
    let i0 = (r.floor() as usize).min(n - 2);
    let mut f = r - i0 as f64;
    // Snap round-off so that sources placed on a node deposit on it alone.
    if f.abs() < 1e-12 {
        f = 0.0;
    } else if (1.0 - f).abs() < 1e-12 {
        f = 1.0;
    }
    (i0, f)
}

impl SourceSet {
    /// Samples every intensity on the mesh levels and deposits all sources.
    pub fn discretize(&self, grid: &Grid2D, mesh: &TimeMesh) -> Result<DiscreteSource> {
        let times = mesh.times();
        let mut out = DiscreteSource::empty(*grid, times.len());
        for src in &self.sources {
            let samples: Vec<f64> = times.iter().map(|&t| src.intensity.eval(t, self.t_star)).collect();
            out.extend(deposit_point_source(grid, src.position, &samples)?)?;
        }
        Ok(out)
    }
}

/// Constant advection velocity, reaction rate and diffusivity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportParams {
    pub velocity: [f64; 2],
    pub gamma: f64,
    pub kappa: f64,
}

/// Equivalent pure-diffusion source for an advection–diffusion–reaction
/// system: each intensity becomes
/// `g_j(t) exp(-v·s_j / (2κ) + (γ + v·v / (4κ)) t)`.
pub fn transform_to_heat(params: &TransportParams, source: &SourceSet) -> Result<SourceSet> {
    if !(params.kappa > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "diffusivity must be positive, got {}",
            params.kappa
        )));
    }
    let v = params.velocity;
    let kappa = params.kappa;
    let rate = params.gamma + (v[0] * v[0] + v[1] * v[1]) / (4.0 * kappa);
    let sources = source
        .sources
        .iter()
        .map(|s| {
            let log_scale = -(v[0] * s.position[0] + v[1] * s.position[1]) / (2.0 * kappa);
            let intensity = if log_scale == 0.0 && rate == 0.0 {
                s.intensity.clone()
            } else {
                Intensity::Modulated {
                    base: Box::new(s.intensity.clone()),
                    log_scale,
                    rate,
                }
            };
            PointSource {
                position: s.position,
                intensity,
            }
        })
        .collect();
    Ok(SourceSet {
        t_star: source.t_star,
        sources,
    })
}
