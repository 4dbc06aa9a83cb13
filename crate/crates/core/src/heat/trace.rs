use super::{Grid2D, TimeMesh};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Boundary edges, in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Edge {
    South,
    North,
    West,
    East,
}

impl Edge {
    pub const ALL: [Edge; 4] = [Edge::South, Edge::North, Edge::West, Edge::East];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Edge::South => "south",
            Edge::North => "north",
            Edge::West => "west",
            Edge::East => "east",
        }
    }

    /// Unit outward normal.
    pub fn normal(self) -> [f64; 2] {
        match self {
            Edge::South => [0.0, -1.0],
            Edge::North => [0.0, 1.0],
            Edge::West => [-1.0, 0.0],
            Edge::East => [1.0, 0.0],
        }
    }

    /// Number of nodes along the edge.
    pub fn len(self, grid: &Grid2D) -> usize {
        match self {
            Edge::South | Edge::North => grid.nx,
            Edge::West | Edge::East => grid.ny,
        }
    }

    /// Grid coordinates `(i, j)` of the `s`-th node along the edge.
    pub fn node(self, grid: &Grid2D, s: usize) -> (usize, usize) {
        match self {
            Edge::South => (s, 0),
            Edge::North => (s, grid.ny - 1),
            Edge::West => (0, s),
            Edge::East => (grid.nx - 1, s),
        }
    }

    pub fn point(self, grid: &Grid2D, s: usize) -> [f64; 2] {
        let (i, j) = self.node(grid, s);
        [grid.x(i), grid.y(j)]
    }

    /// Spacing along the edge.
    pub fn spacing(self, grid: &Grid2D) -> f64 {
        match self {
            Edge::South | Edge::North => grid.hx(),
            Edge::West | Edge::East => grid.hy(),
        }
    }

    /// Spacing normal to the edge.
    pub fn normal_spacing(self, grid: &Grid2D) -> f64 {
        match self {
            Edge::South | Edge::North => grid.hy(),
            Edge::West | Edge::East => grid.hx(),
        }
    }

    /// Trapezoid arclength weight of node `s`.
    pub fn arc_weight(self, grid: &Grid2D, s: usize) -> f64 {
        Grid2D::trap_weight(s, self.len(grid), self.spacing(grid))
    }
}

/// Time-dependent values on the four edges of the grid.
///
/// Used for both the measured trace `u|_Σ` and Neumann fluxes on `Σ⁺`.
/// Storage per edge is row-major in `(arclength index, time index)`.
/// Corner nodes appear on two edges; for traces both copies agree, for
/// fluxes each edge carries its own value.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundarySeries {
    grid: Grid2D,
    times: Vec<f64>,
    data: [Vec<f64>; 4],
}

/// Measured concentration on `Σ` over `[0, T]`.
pub type BoundaryTrace = BoundarySeries;
/// Neumann flux `κ ∂ψ/∂n` on `Σ⁺`.
pub type BoundaryFlux = BoundarySeries;

impl BoundarySeries {
    pub fn zeros(grid: Grid2D, times: Vec<f64>) -> Self {
        let nt = times.len();
        let data = Edge::ALL.map(|e| vec![0.0; e.len(&grid) * nt]);
        BoundarySeries { grid, times, data }
    }

    /// Samples `f(edge, point, t)` at every boundary node and time.
    pub fn from_fn(
        grid: Grid2D,
        times: Vec<f64>,
        mut f: impl FnMut(Edge, [f64; 2], f64) -> f64,
    ) -> Self {
        let mut out = Self::zeros(grid, times);
        let nt = out.times.len();
        for e in Edge::ALL {
            for s in 0..e.len(&grid) {
                let p = e.point(&grid, s);
                for n in 0..nt {
                    out.data[e.id()][s * nt + n] = f(e, p, out.times[n]);
                }
            }
        }
        out
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    #[inline]
    pub fn get(&self, edge: Edge, s: usize, n: usize) -> f64 {
        self.data[edge.id()][s * self.times.len() + n]
    }

    #[inline]
    pub fn set(&mut self, edge: Edge, s: usize, n: usize, value: f64) {
        let nt = self.times.len();
        self.data[edge.id()][s * nt + n] = value;
    }

    /// Samples of one edge, row-major `(s, n)`.
    pub fn edge_data(&self, edge: Edge) -> &[f64] {
        &self.data[edge.id()]
    }

    pub fn edge_data_mut(&mut self, edge: Edge) -> &mut [f64] {
        &mut self.data[edge.id()]
    }

    /// Total number of stored samples.
    pub fn len(&self) -> usize {
        self.data.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Restriction to time levels `range`.
    pub fn window(&self, range: std::ops::RangeInclusive<usize>) -> BoundarySeries {
        let (a, b) = (*range.start(), *range.end());
        let times = self.times[a..=b].to_vec();
        let nt_new = times.len();
        let nt = self.times.len();
        let mut out = Self::zeros(self.grid, times);
        for e in Edge::ALL {
            for s in 0..e.len(&self.grid) {
                let src = &self.data[e.id()][s * nt + a..=s * nt + b];
                out.data[e.id()][s * nt_new..(s + 1) * nt_new].copy_from_slice(src);
            }
        }
        out
    }

    /// Trapezoid weights of the stored time levels.
    pub fn time_weights(&self) -> Vec<f64> {
        trapezoid_weights(&self.times)
    }

    /// Space-time trapezoid integral of the product with another series
    /// on the same grid and times.
    pub fn inner(&self, other: &BoundarySeries) -> Result<f64> {
        self.check_compatible(other)?;
        let wt = self.time_weights();
        let nt = self.times.len();
        let mut sum = 0.0;
        for e in Edge::ALL {
            let (a, b) = (&self.data[e.id()], &other.data[e.id()]);
            for s in 0..e.len(&self.grid) {
                let ws = e.arc_weight(&self.grid, s);
                let mut acc = 0.0;
                for n in 0..nt {
                    acc += wt[n] * a[s * nt + n] * b[s * nt + n];
                }
                sum += ws * acc;
            }
        }
        Ok(sum)
    }

    /// `Σ_n Δt_n ∫ ā b̄ dσ`, where `ā` averages levels `n` and `n + 1`.
    ///
    /// This is the pairing under which a Crank–Nicolson flux response and a
    /// forward trace satisfy the discrete duality identity exactly.
    pub fn staggered_inner(&self, other: &BoundarySeries) -> Result<f64> {
        self.check_compatible(other)?;
        let nt = self.times.len();
        let mut sum = 0.0;
        for e in Edge::ALL {
            let (a, b) = (&self.data[e.id()], &other.data[e.id()]);
            for s in 0..e.len(&self.grid) {
                let (ra, rb) = (&a[s * nt..(s + 1) * nt], &b[s * nt..(s + 1) * nt]);
                let mut acc = 0.0;
                for n in 0..nt.saturating_sub(1) {
                    let dt = self.times[n + 1] - self.times[n];
                    acc += dt * (ra[n] + ra[n + 1]) * (rb[n] + rb[n + 1]);
                }
                sum += 0.25 * e.arc_weight(&self.grid, s) * acc;
            }
        }
        Ok(sum)
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).map(f64::sqrt).unwrap_or(f64::NAN)
    }

    /// Root mean square over all stored samples.
    pub fn rms(&self) -> f64 {
        let n = self.len();
        if n == 0 {
            return 0.0;
        }
        (self.data.iter().flatten().map(|v| v * v).sum::<f64>() / n as f64).sqrt()
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.data.iter_mut().flatten()
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.data.iter().flatten()
    }

    /// `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &BoundarySeries) -> Result<()> {
        self.check_compatible(other)?;
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn check_compatible(&self, other: &BoundarySeries) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::MeshMismatch("boundary series grids differ".into()));
        }
        if !same_times(&self.times, &other.times) {
            return Err(Error::MeshMismatch("boundary series time levels differ".into()));
        }
        Ok(())
    }

    /// Largest disagreement between the two copies of each corner value.
    pub fn corner_mismatch(&self) -> f64 {
        let g = self.grid;
        let pairs = [
            ((Edge::South, 0), (Edge::West, 0)),
            ((Edge::South, g.nx - 1), (Edge::East, 0)),
            ((Edge::North, 0), (Edge::West, g.ny - 1)),
            ((Edge::North, g.nx - 1), (Edge::East, g.ny - 1)),
        ];
        let mut worst = 0.0_f64;
        for ((ea, sa), (eb, sb)) in pairs {
            for n in 0..self.times.len() {
                worst = worst.max((self.get(ea, sa, n) - self.get(eb, sb, n)).abs());
            }
        }
        worst
    }

    /// Writes the binary container: magic, little-endian `u64` header
    /// length, JSON header, then the float64 payload (edges south, north,
    /// west, east; each row-major in arclength index then time index).
    pub fn write_to(&self, mut w: impl Write, mesh: Option<&TimeMesh>, kappa: Option<f64>) -> Result<()> {
        let header = TraceHeader {
            format: TRACE_FORMAT.into(),
            grid: self.grid,
            mesh: mesh.copied(),
            kappa,
            units: TraceUnits::default(),
            edge_order: Edge::ALL.to_vec(),
            edge_lengths: Edge::ALL.map(|e| e.len(&self.grid)).to_vec(),
            times: self.times.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(TRACE_MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        let mut buf = Vec::with_capacity(self.len() * 8);
        for v in self.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<(BoundarySeries, TraceHeader)> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != TRACE_MAGIC {
            return Err(Error::Format("not a boundary trace container".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let header: TraceHeader = serde_json::from_slice(&json)?;
        header.grid.validate()?;
        if header.edge_order != Edge::ALL {
            return Err(Error::Format("unsupported edge ordering".into()));
        }
        let mut out = BoundarySeries::zeros(header.grid, header.times.clone());
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        if payload.len() != out.len() * 8 {
            return Err(Error::Format(format!(
                "payload has {} bytes, expected {}",
                payload.len(),
                out.len() * 8
            )));
        }
        for (v, chunk) in out.values_mut().zip(payload.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("chunk of 8"));
        }
        Ok((out, header))
    }

    pub fn save(&self, path: &std::path::Path, mesh: Option<&TimeMesh>, kappa: Option<f64>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w, mesh, kappa)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<(BoundarySeries, TraceHeader)> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }

    /// CSV export with columns `edge,index,t,value`.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "edge,index,t,value")?;
        for e in Edge::ALL {
            for s in 0..e.len(&self.grid) {
                for (n, t) in self.times.iter().enumerate() {
                    writeln!(w, "{},{},{},{:e}", e.name(), s, t, self.get(e, s, n))?;
                }
            }
        }
        Ok(())
    }
}

const TRACE_MAGIC: &[u8; 8] = b"SRCTRACE";
const TRACE_FORMAT: &str = "srctrace-boundary-series/1";

/// JSON header of the binary trace container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub grid: Grid2D,
    pub mesh: Option<TimeMesh>,
    pub kappa: Option<f64>,
    pub units: TraceUnits,
    pub edge_order: Vec<Edge>,
    pub edge_lengths: Vec<usize>,
    pub times: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceUnits {
    pub length: String,
    pub time: String,
    pub value: String,
}

impl Default for TraceUnits {
    fn default() -> Self {
        TraceUnits {
            length: "m".into(),
            time: "s".into(),
            value: "concentration".into(),
        }
    }
}

/// Trapezoid weights for possibly non-uniform abscissae.
pub(crate) fn trapezoid_weights(t: &[f64]) -> Vec<f64> {
    let n = t.len();
    let mut w = vec![0.0; n];
    for k in 0..n.saturating_sub(1) {
        let h = t[k + 1] - t[k];
        w[k] += 0.5 * h;
        w[k + 1] += 0.5 * h;
    }
    w
}

pub(crate) fn same_times(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-9 * (1.0 + x.abs()))
}
