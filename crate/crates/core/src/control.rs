//! Boundary-control basis on `Σ⁺`: the closed-form fluxes `ω_η`, the cache
//! of adjoint states `ψ_η(T*)`, and least-squares fits of `v(·,T*)`.

use crate::error::{Error, Result};
use crate::heat::{adjoint_on, BoundaryFlux, Modal, BoundarySeries, BoundaryTrace, Edge, Field, Grid2D, TimeMesh};
use crate::lsqr::{lsqr, DiagonalOperator, LsqrOptions, LsqrStop};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::PI;
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

/// `η = (η1, η2, η3)` with `1 ≤ η_j ≤ W_j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BasisIndex(pub [usize; 3]);

impl BasisIndex {
    pub fn validate(&self, w: [usize; 3]) -> Result<()> {
        for j in 0..3 {
            if self.0[j] == 0 || self.0[j] > w[j] {
                return Err(Error::InvalidParameter(format!(
                    "basis index {:?} outside the box {w:?}",
                    self.0
                )));
            }
        }
        Ok(())
    }

    /// Position in the lexicographic enumeration of the box.
    pub fn flat(&self, w: [usize; 3]) -> usize {
        ((self.0[0] - 1) * w[1] + (self.0[1] - 1)) * w[2] + (self.0[2] - 1)
    }

    pub fn from_flat(k: usize, w: [usize; 3]) -> Self {
        let e3 = k % w[2];
        let e2 = (k / w[2]) % w[1];
        let e1 = k / (w[1] * w[2]);
        BasisIndex([e1 + 1, e2 + 1, e3 + 1])
    }
}

/// All indices of the box in flat order.
pub fn basis_indices(w: [usize; 3]) -> Vec<BasisIndex> {
    (0..w[0] * w[1] * w[2]).map(|k| BasisIndex::from_flat(k, w)).collect()
}

/// Temporal factor `cos((2η3 − 1)/2 · π (t − T*)/(T − T*))`.
pub fn omega_temporal(eta3: usize, t: f64, mesh: &TimeMesh) -> f64 {
    let phase = (2 * eta3 - 1) as f64 / 2.0 * PI * (t - mesh.t_star) / (mesh.t_final - mesh.t_star);
    phase.cos()
}

/// Spatial factor of `ω_η` at node `s` of `edge`.
pub fn omega_spatial(eta: BasisIndex, edge: Edge, grid: &Grid2D, s: usize, kappa: f64) -> f64 {
    let [e1, e2, _] = eta.0;
    let p = edge.point(grid, s);
    let (k1, k2) = (e1 as f64 * PI / grid.lx, e2 as f64 * PI / grid.ly);
    let sign = |e: usize| if e.is_multiple_of(2) { 1.0 } else { -1.0 };
    match edge {
        Edge::South => -kappa * (k1 * p[0]).sin() * k2,
        Edge::North => kappa * (k1 * p[0]).sin() * k2 * sign(e2),
        Edge::West => -kappa * (k2 * p[1]).sin() * k1,
        Edge::East => kappa * (k2 * p[1]).sin() * k1 * sign(e1),
    }
}

/// `ω_η` sampled on the `Σ⁺` time levels of `mesh`.
pub fn omega_basis(eta: BasisIndex, grid: &Grid2D, mesh: &TimeMesh, kappa: f64) -> BoundaryFlux {
    let times = mesh.plus_times();
    let temporal: Vec<f64> = times.iter().map(|&t| omega_temporal(eta.0[2], t, mesh)).collect();
    let mut flux = BoundarySeries::zeros(*grid, times);
    for e in Edge::ALL {
        for s in 0..e.len(grid) {
            let a = omega_spatial(eta, e, grid, s, kappa);
            for (n, c) in temporal.iter().enumerate() {
                flux.set(e, s, n, a * c);
            }
        }
    }
    flux
}

/// Hash of the grid, mesh and diffusivity a cache or trace belongs to.
pub fn fingerprint(grid: &Grid2D, mesh: &TimeMesh, kappa: f64) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        grid: &'a Grid2D,
        mesh: &'a TimeMesh,
        kappa: f64,
        scheme: &'static str,
    }
    let key = Key {
        grid,
        mesh,
        kappa,
        scheme: "crank-nicolson/ghost-neumann",
    };
    let json = serde_json::to_vec(&key).expect("plain data serializes");
    hex::encode(Sha256::digest(&json))
}

/// Precomputed pairs `(ω_η, ψ_η(T*))` for every `η` in the box `W`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlCache {
    pub w: [usize; 3],
    pub grid: Grid2D,
    pub mesh: TimeMesh,
    pub kappa: f64,
    pub fingerprint: String,
    /// `ψ_η(T*)` fields in flat index order, concatenated.
    psi: Vec<f64>,
}

impl ControlCache {
    pub fn len(&self) -> usize {
        self.w.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn psi(&self, k: usize) -> &[f64] {
        let n = self.grid.len();
        &self.psi[k * n..(k + 1) * n]
    }

    pub fn psi_field(&self, eta: BasisIndex) -> Field {
        Field {
            grid: self.grid,
            values: self.psi(eta.flat(self.w)).to_vec(),
        }
    }

    pub fn indices(&self) -> Vec<BasisIndex> {
        basis_indices(self.w)
    }

    pub fn check_data(&self, grid: &Grid2D, mesh: &TimeMesh, kappa: f64) -> Result<()> {
        let data = fingerprint(grid, mesh, kappa);
        if data != self.fingerprint {
            return Err(Error::FingerprintMismatch {
                cache: self.fingerprint.clone(),
                data,
            });
        }
        Ok(())
    }

    fn manifest(&self) -> CacheManifest {
        CacheManifest::new(self.w, self.grid, self.mesh, self.kappa)
    }

    /// Writes the cache file atomically (temporary file then rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = sibling(path, "tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            self.manifest().write(&mut w)?;
            write_f64s(&mut w, &self.psi)?;
            w.flush()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let manifest = CacheManifest::read(&mut r)?;
        let n = manifest.grid.len() * manifest.count();
        let psi = read_f64s(&mut r, n)?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after cache payload".into()));
        }
        manifest.into_cache(psi)
    }
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Default control basis box `(W1, W2, W3)`.
pub const DEFAULT_BOX: [usize; 3] = [12, 12, 5];

const CACHE_MAGIC: &[u8; 8] = b"SRCCTRL1";
pub const CACHE_FORMAT: &str = "srctrace-control-cache/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CacheManifest {
    format: String,
    w: [usize; 3],
    grid: Grid2D,
    mesh: TimeMesh,
    kappa: f64,
    fingerprint: String,
    block_len: usize,
}

impl CacheManifest {
    fn new(w: [usize; 3], grid: Grid2D, mesh: TimeMesh, kappa: f64) -> Self {
        CacheManifest {
            format: CACHE_FORMAT.into(),
            w,
            grid,
            mesh,
            kappa,
            fingerprint: fingerprint(&grid, &mesh, kappa),
            block_len: grid.len(),
        }
    }

    fn count(&self) -> usize {
        self.w.iter().product()
    }

    fn write(&self, mut w: impl Write) -> Result<u64> {
        let json = serde_json::to_vec(self)?;
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        Ok(16 + json.len() as u64)
    }

    fn read(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::Format("not a control cache file".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut json)?;
        let m: CacheManifest = serde_json::from_slice(&json)?;
        if m.format != CACHE_FORMAT {
            return Err(Error::Format(format!("unsupported cache format {}", m.format)));
        }
        m.grid.validate()?;
        m.mesh.validate()?;
        if m.block_len != m.grid.len() || m.fingerprint != fingerprint(&m.grid, &m.mesh, m.kappa) {
            return Err(Error::Format("cache manifest is inconsistent".into()));
        }
        Ok(m)
    }

    fn into_cache(self, psi: Vec<f64>) -> Result<ControlCache> {
        if psi.len() != self.count() * self.block_len {
            return Err(Error::Format("cache payload has the wrong length".into()));
        }
        Ok(ControlCache {
            w: self.w,
            grid: self.grid,
            mesh: self.mesh,
            kappa: self.kappa,
            fingerprint: self.fingerprint,
            psi,
        })
    }
}

fn write_f64s(mut w: impl Write, v: &[f64]) -> Result<()> {
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s(mut r: impl Read, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("cache payload is truncated".into()),
        _ => Error::Io(e),
    })?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn validate_box(w: [usize; 3]) -> Result<()> {
    if w.iter().any(|&x| x == 0) {
        return Err(Error::InvalidParameter(format!("basis box {w:?} must be positive")));
    }
    Ok(())
}

/// One adjoint solve per index; `ψ_η(T*)` for the given flat indices.
fn solve_block(
    ks: std::ops::Range<usize>,
    w: [usize; 3],
    grid: &Grid2D,
    mesh: &TimeMesh,
    kappa: f64,
) -> Result<Vec<Vec<f64>>> {
    let modal = Modal::new(grid);
    ks.into_par_iter()
        .map(|k| {
            let eta = BasisIndex::from_flat(k, w);
            let flux = omega_basis(eta, grid, mesh, kappa);
            adjoint_on(&modal, mesh, kappa, &flux)
                .map(|f| f.values)
                .map_err(|e| Error::CacheSolve {
                    eta: eta.0,
                    source: Box::new(e),
                })
        })
        .collect()
}

/// Runs `W1·W2·W3` adjoint solves in memory.
pub fn precompute_cache(w: [usize; 3], grid: &Grid2D, mesh: &TimeMesh, kappa: f64) -> Result<ControlCache> {
    validate_box(w)?;
    grid.validate()?;
    mesh.validate()?;
    let count = w.iter().product();
    let psi = solve_block(0..count, w, grid, mesh, kappa)?.concat();
    CacheManifest::new(w, *grid, *mesh, kappa).into_cache(psi)
}

/// Outcome of [`precompute_to_file`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PrecomputeReport {
    pub total: usize,
    /// Entries found on disk from an earlier run.
    pub reused: usize,
    pub solved: usize,
}

/// Builds the cache at `path`, resuming from `<path>.partial` when an
/// earlier run was interrupted. A complete cache with a matching
/// manifest is left untouched. Entries are appended in chunks of
/// `chunk` solves; `progress(done, total)` runs after each chunk.
pub fn precompute_to_file(
    path: &Path,
    w: [usize; 3],
    grid: &Grid2D,
    mesh: &TimeMesh,
    kappa: f64,
    chunk: usize,
    mut progress: impl FnMut(usize, usize) -> bool,
) -> Result<PrecomputeReport> {
    validate_box(w)?;
    grid.validate()?;
    mesh.validate()?;
    let manifest = CacheManifest::new(w, *grid, *mesh, kappa);
    let total = manifest.count();
    if path.exists() {
        if let Ok(existing) = CacheManifest::read(BufReader::new(File::open(path)?)) {
            if existing == manifest && ControlCache::load(path).is_ok() {
                return Ok(PrecomputeReport {
                    total,
                    reused: total,
                    solved: 0,
                });
            }
        }
    }
    let partial = sibling(path, "partial");
    let block_bytes = 8 * grid.len() as u64;
    let mut done = 0usize;
    let mut file = None;
    if partial.exists() {
        let mut f = OpenOptions::new().read(true).write(true).open(&partial)?;
        if let Ok(found) = CacheManifest::read(BufReader::new(&mut f)) {
            if found == manifest {
                let header = 16 + serde_json::to_vec(&manifest)?.len() as u64;
                let len = f.metadata()?.len();
                done = (((len.max(header)) - header) / block_bytes).min(total as u64) as usize;
                f.set_len(header + done as u64 * block_bytes)?;
                f.seek(SeekFrom::End(0))?;
                file = Some(f);
            }
        }
    }
    let reused = done;
    let mut file = match file {
        Some(f) => f,
        None => {
            let mut f = File::create(&partial)?;
            manifest.write(&mut f)?;
            f
        }
    };
    let chunk = chunk.max(1);
    while done < total {
        let end = (done + chunk).min(total);
        let block = solve_block(done..end, w, grid, mesh, kappa)?;
        let mut buf = BufWriter::new(&mut file);
        for psi in &block {
            write_f64s(&mut buf, psi)?;
        }
        buf.flush()?;
        drop(buf);
        file.sync_data()?;
        done = end;
        if !progress(done, total) && done < total {
            return Err(Error::InvalidParameter(format!(
                "precompute interrupted after {done} of {total} entries"
            )));
        }
    }
    drop(file);
    fs::rename(&partial, path)?;
    Ok(PrecomputeReport {
        total,
        reused,
        solved: total - reused,
    })
}

/// Fitted coefficients of one real target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlCoefficients {
    pub a: Vec<f64>,
    /// `‖Σ a_η ψ_η(T*) − target‖` in `L²(Ω)`.
    pub residual: f64,
    pub target_norm: f64,
    pub iterations: usize,
}

impl ControlCoefficients {
    pub fn relative_residual(&self) -> f64 {
        if self.target_norm == 0.0 {
            0.0
        } else {
            self.residual / self.target_norm
        }
    }
}

/// Coefficients of the real and imaginary parts of a complex target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexControl {
    pub re: ControlCoefficients,
    pub im: ControlCoefficients,
}

impl ComplexControl {
    /// Residual of the complex fit relative to the complex target norm.
    pub fn relative_residual(&self) -> f64 {
        let t = self.re.target_norm.hypot(self.im.target_norm);
        if t == 0.0 {
            0.0
        } else {
            self.re.residual.hypot(self.im.residual) / t
        }
    }
}

/// Least-squares fitter over a cache.
///
/// The weighted basis matrix `B = diag(√w) Ψ` is factored once as
/// `B = Q U diag(σ) Vᵀ`; LSQR then runs on `diag(σ)` with right-hand side
/// `(QU)ᵀ b`, which generates the same iterates as LSQR on `B`.
pub struct ControlFitter {
    cache: ControlCache,
    sqrt_w: Vec<f64>,
    q: DMatrix<f64>,
    u: DMatrix<f64>,
    sigma: Vec<f64>,
    v: DMatrix<f64>,
    pub options: LsqrOptions,
    /// When set, [`ControlFitter::fit`] keeps only `σ > rcond·σ_max`
    /// instead of running LSQR.
    pub rcond: Option<f64>,
}

impl std::fmt::Debug for ControlFitter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ControlFitter")
            .field("w", &self.cache.w)
            .field("grid", &self.cache.grid)
            .field("options", &self.options)
            .finish()
    }
}

impl ControlFitter {
    pub fn new(cache: ControlCache) -> Result<Self> {
        let n = cache.grid.len();
        let p = cache.len();
        if n < p {
            return Err(Error::InvalidParameter(format!(
                "{p} basis functions exceed the {n} grid nodes"
            )));
        }
        let sqrt_w: Vec<f64> = cache.grid.weights().iter().map(|w| w.sqrt()).collect();
        let b = DMatrix::from_fn(n, p, |i, k| sqrt_w[i] * cache.psi[k * n + i]);
        let qr = b.qr();
        let q = qr.q();
        let r = qr.r();
        let svd = r.svd(true, true);
        let u = svd.u.expect("requested U");
        let v = svd.v_t.expect("requested Vᵀ").transpose();
        let sigma = svd.singular_values.iter().copied().collect();
        Ok(ControlFitter {
            cache,
            sqrt_w,
            q,
            u,
            sigma,
            v,
            options: LsqrOptions::default(),
            rcond: None,
        })
    }

    pub fn cache(&self) -> &ControlCache {
        &self.cache
    }

    /// Singular values of the weighted basis matrix.
    pub fn singular_values(&self) -> &[f64] {
        &self.sigma
    }

    /// Fit with the fitter's `rcond` setting.
    pub fn fit(&self, target: &Field) -> Result<ControlCoefficients> {
        self.fit_with(target, self.rcond)
    }

    /// Truncated-SVD solution keeping `σ > rcond·σ_max`.
    pub fn fit_truncated(&self, target: &Field, rcond: f64) -> Result<ControlCoefficients> {
        self.fit_with(target, Some(rcond))
    }

    fn fit_with(&self, target: &Field, rcond: Option<f64>) -> Result<ControlCoefficients> {
        if target.grid != self.cache.grid {
            return Err(Error::FingerprintMismatch {
                cache: self.cache.fingerprint.clone(),
                data: format!("target on grid {:?}", target.grid),
            });
        }
        let n = self.cache.grid.len();
        let b: Vec<f64> = target.values.iter().zip(&self.sqrt_w).map(|(t, s)| t * s).collect();
        let target_norm = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        let qtb = self.q.tr_mul(&nalgebra::DVector::from_column_slice(&b));
        let c = self.u.tr_mul(&qtb);
        let sol = match rcond {
            None => lsqr(&DiagonalOperator(&self.sigma), c.as_slice(), &self.options),
            Some(rc) => {
                let cut = rc * self.sigma.iter().cloned().fold(0.0, f64::max);
                let x = self
                    .sigma
                    .iter()
                    .zip(c.iter())
                    .map(|(s, ci)| if *s > cut { ci / s } else { 0.0 })
                    .collect();
                crate::lsqr::LsqrSolution {
                    x,
                    iterations: 0,
                    residual_estimate: f64::NAN,
                    stop: LsqrStop::LeastSquares,
                }
            }
        };
        let a = &self.v * nalgebra::DVector::from_vec(sol.x);
        let a: Vec<f64> = a.iter().copied().collect();
        if !a.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite { step: sol.iterations, t: f64::NAN });
        }
        let mut r = b;
        for (k, &ak) in a.iter().enumerate() {
            if ak != 0.0 {
                let col = self.cache.psi(k);
                for i in 0..n {
                    r[i] -= ak * self.sqrt_w[i] * col[i];
                }
            }
        }
        let residual = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        let iterations = if sol.stop == LsqrStop::ZeroRhs { 0 } else { sol.iterations };
        Ok(ControlCoefficients {
            a,
            residual,
            target_norm,
            iterations,
        })
    }

    pub fn fit_complex(&self, re: &Field, im: &Field) -> Result<ComplexControl> {
        Ok(ComplexControl {
            re: self.fit(re)?,
            im: self.fit(im)?,
        })
    }

    /// `L²(Ω)` residual of an explicit coefficient vector.
    pub fn residual_of(&self, a: &[f64], target: &Field) -> f64 {
        let n = self.cache.grid.len();
        let mut r: Vec<f64> = target.values.clone();
        for (k, &ak) in a.iter().enumerate() {
            let col = self.cache.psi(k);
            for i in 0..n {
                r[i] -= ak * col[i];
            }
        }
        Field {
            grid: self.cache.grid,
            values: r,
        }
        .norm()
    }
}

/// Spec-level entry point: fit `target` with the fitter's cache.
pub fn fit_control(fitter: &ControlFitter, target: &Field) -> Result<ControlCoefficients> {
    fitter.fit(target)
}

/// `ω = Σ a_η ω_η` on the `Σ⁺` levels.
pub fn assemble_control(a: &[f64], cache: &ControlCache) -> Result<BoundaryFlux> {
    if a.len() != cache.len() {
        return Err(Error::InvalidParameter(format!(
            "{} coefficients for a cache of {}",
            a.len(),
            cache.len()
        )));
    }
    let grid = cache.grid;
    let mut flux = BoundarySeries::zeros(grid, cache.mesh.plus_times());
    let temporal: Vec<Vec<f64>> = (1..=cache.w[2])
        .map(|e3| flux.times().iter().map(|&t| omega_temporal(e3, t, &cache.mesh)).collect())
        .collect();
    for e in Edge::ALL {
        for s in 0..e.len(&grid) {
            for (k, &ak) in a.iter().enumerate() {
                if ak == 0.0 {
                    continue;
                }
                let eta = BasisIndex::from_flat(k, cache.w);
                let c = ak * omega_spatial(eta, e, &grid, s, cache.kappa);
                for (n, tf) in temporal[eta.0[2] - 1].iter().enumerate() {
                    let v = flux.get(e, s, n);
                    flux.set(e, s, n, v + c * tf);
                }
            }
        }
    }
    Ok(flux)
}

/// `c_η = ∫_{Σ⁺} φ ω_η dσ dt` for every basis index, by trapezoid
/// quadrature on the stored levels.
pub fn basis_projections(trace_plus: &BoundaryTrace, cache: &ControlCache) -> Result<Vec<f64>> {
    let grid = cache.grid;
    if trace_plus.grid() != &grid {
        return Err(Error::MeshMismatch("trace and cache grids differ".into()));
    }
    let expect = cache.mesh.plus_times();
    if !crate::heat::same_times(trace_plus.times(), &expect) {
        return Err(Error::MeshMismatch("trace does not cover the Σ⁺ levels of the cache".into()));
    }
    let nt = expect.len();
    let w = cache.w;
    // P[e][s][η3] = Σ_n Δt_n φ̄(e,s) T̄_η3 with bars averaging levels n, n+1
    let temporal: Vec<Vec<f64>> = (1..=w[2])
        .map(|e3| {
            let tv: Vec<f64> = expect.iter().map(|&t| omega_temporal(e3, t, &cache.mesh)).collect();
            let mut wts = vec![0.0; nt];
            for n in 0..nt - 1 {
                let q = 0.25 * (expect[n + 1] - expect[n]) * (tv[n] + tv[n + 1]);
                wts[n] += q;
                wts[n + 1] += q;
            }
            wts
        })
        .collect();
    let mut out = vec![0.0; cache.len()];
    for e in Edge::ALL {
        let data = trace_plus.edge_data(e);
        let ns = e.len(&grid);
        let mut p = vec![0.0; ns * w[2]];
        for s in 0..ns {
            let row = &data[s * nt..(s + 1) * nt];
            for (e3, tf) in temporal.iter().enumerate() {
                p[s * w[2] + e3] = row.iter().zip(tf).map(|(a, b)| a * b).sum::<f64>() * e.arc_weight(&grid, s);
            }
        }
        for (k, out_k) in out.iter_mut().enumerate() {
            let eta = BasisIndex::from_flat(k, w);
            let mut acc = 0.0;
            for s in 0..ns {
                acc += omega_spatial(eta, e, &grid, s, cache.kappa) * p[s * w[2] + eta.0[2] - 1];
            }
            *out_k += acc;
        }
    }
    Ok(out)
}

/// `Σ (a_re + i a_im)_η c_η`.
pub fn control_term_from_projections(fit: &ComplexControl, c: &[f64]) -> Complex64 {
    let re: f64 = fit.re.a.iter().zip(c).map(|(a, c)| a * c).sum();
    let im: f64 = fit.im.a.iter().zip(c).map(|(a, c)| a * c).sum();
    Complex64::new(re, im)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (Grid2D, TimeMesh) {
        (
            Grid2D::new(100.0, 80.0, 21, 17).unwrap(),
            TimeMesh::new(200.0, 300.0, 40, 20).unwrap(),
        )
    }

    #[test]
    fn flat_index_round_trip() {
        let w = [3, 4, 5];
        for (k, eta) in basis_indices(w).into_iter().enumerate() {
            assert_eq!(eta.flat(w), k);
            eta.validate(w).unwrap();
        }
        assert!(BasisIndex([4, 1, 1]).validate(w).is_err());
    }

    #[test]
    fn first_temporal_mode_vanishes_at_final_time() {
        let (grid, mesh) = small();
        let f = omega_basis(BasisIndex([2, 3, 1]), &grid, &mesh, 1.0);
        let last = f.n_times() - 1;
        for e in Edge::ALL {
            for s in 0..e.len(&grid) {
                assert!(f.get(e, s, last).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn sign_pattern_for_lowest_index() {
        let (grid, _) = small();
        let eta = BasisIndex([1, 1, 1]);
        let mid_x = grid.nx / 2;
        let mid_y = grid.ny / 2;
        assert!(omega_spatial(eta, Edge::South, &grid, mid_x, 1.0) < 0.0);
        assert!(omega_spatial(eta, Edge::North, &grid, mid_x, 1.0) < 0.0);
        assert!(omega_spatial(eta, Edge::West, &grid, mid_y, 1.0) < 0.0);
        assert!(omega_spatial(eta, Edge::East, &grid, mid_y, 1.0) < 0.0);
        let eta = BasisIndex([2, 2, 1]);
        let q = grid.nx / 4;
        assert!(omega_spatial(eta, Edge::North, &grid, q, 1.0) > 0.0);
        assert_eq!(omega_spatial(eta, Edge::South, &grid, 0, 1.0), 0.0);
        assert_eq!(omega_spatial(eta, Edge::West, &grid, 0, 1.0), 0.0);
    }

    #[test]
    fn assemble_single_coefficient_scales_basis() {
        let (grid, mesh) = small();
        let cache = CacheManifest::new([2, 2, 2], grid, mesh, 1.5)
            .into_cache(vec![0.0; 8 * grid.len()])
            .unwrap();
        let mut a = vec![0.0; 8];
        a[5] = 2.5;
        let flux = assemble_control(&a, &cache).unwrap();
        let mut expect = omega_basis(BasisIndex::from_flat(5, [2, 2, 2]), &grid, &mesh, 1.5);
        expect.values_mut().for_each(|v| *v *= 2.5);
        for (x, y) in flux.values().zip(expect.values()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn projections_match_direct_inner_products() {
        let (grid, mesh) = small();
        let cache = CacheManifest::new([2, 3, 2], grid, mesh, 0.7)
            .into_cache(vec![0.0; 12 * grid.len()])
            .unwrap();
        let phi = BoundarySeries::from_fn(grid, mesh.plus_times(), |e, p, t| {
            (p[0] * 0.01 + p[1] * 0.02).sin() * (t * 1e-3).cos() + e.id() as f64
        });
        let c = basis_projections(&phi, &cache).unwrap();
        for (k, ck) in c.iter().enumerate() {
            let omega = omega_basis(BasisIndex::from_flat(k, cache.w), &grid, &mesh, 0.7);
            let direct = phi.staggered_inner(&omega).unwrap();
            assert!((ck - direct).abs() < 1e-10 * direct.abs().max(1.0));
        }
    }
}
