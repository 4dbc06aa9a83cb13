//! Source positions and `Λ₀` from the zero-mode data `R₀`.
//!
//! For fixed positions the model `R₀ ≈ A(S) Λ₀` is linear in the real
//! vector `Λ₀`, which is eliminated by least squares. The positions are
//! then fitted by box-projected Levenberg–Marquardt on the reduced
//! residual, using Kaufman's approximation of its Jacobian. The source
//! count is chosen as the smallest one whose best fit is within a fixed
//! factor of the best fit at any count.

use crate::cgo::CgoFunction;
use crate::error::{Error, Result};
use crate::heat::Grid2D;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Distance kept between position iterates and the walls, relative to the
/// diagonal.
const WALL_MARGIN: f64 = 1e-6;

/// A source is kept only if removing it raises the objective by more than
/// this factor.
const ELIMINATION_RATIO: f64 = 10.0;

/// Objectives below this are treated as exact fits.
const OBJECTIVE_FLOOR: f64 = 1e-24;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocateOptions {
    /// Upper bound `M` on the number of sources.
    pub max_sources: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Sources closer than this fraction of `diag(Ω)` are merged.
    pub merge_radius: f64,
    /// Sources with `|λ₀|` below this fraction of the largest are dropped.
    pub intensity_floor: f64,
    pub max_iter: usize,
    /// Step tolerance as a fraction of `diag(Ω)`.
    pub step_tolerance: f64,
}

impl Default for LocateOptions {
    fn default() -> Self {
        LocateOptions {
            max_sources: 7,
            restarts: 50,
            seed: 0,
            merge_radius: 0.02,
            intensity_floor: 0.01,
            max_iter: 3000,
            step_tolerance: 1e-12,
        }
    }
}

/// One multistart round at a fixed source count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocateRound {
    pub sources: usize,
    /// Best `‖A Λ₀ - R₀‖² / ‖R₀‖²`.
    pub objective: f64,
    pub restart_objectives: Vec<f64>,
    pub merged: usize,
    pub dropped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Located {
    pub detected: bool,
    pub positions: Vec<[f64; 2]>,
    pub lambda0: Vec<f64>,
    /// Relative objective of the returned configuration.
    pub objective: f64,
    pub rounds: Vec<LocateRound>,
}

/// The reduced least-squares problem in the positions.
pub struct VarPro {
    rho: Vec<[Complex64; 2]>,
    b: DVector<f64>,
    scale: f64,
    lo: [f64; 2],
    hi: [f64; 2],
}

struct Projection {
    lambda: DVector<f64>,
    residual: DVector<f64>,
    a: DMatrix<f64>,
    u: DMatrix<f64>,
}

impl VarPro {
    pub fn new(r0: &[Complex64], functions: &[CgoFunction], grid: &Grid2D) -> Result<Self> {
        if r0.len() != functions.len() {
            return Err(Error::InvalidParameter(format!(
                "{} values for {} test functions",
                r0.len(),
                functions.len()
            )));
        }
        let n = r0.len();
        let mut b = DVector::zeros(2 * n);
        for (l, z) in r0.iter().enumerate() {
            b[l] = z.re;
            b[n + l] = z.im;
        }
        let scale = b.norm_squared();
        // Sources are interior, so keep iterates off the walls.
        let margin = WALL_MARGIN * grid.diag();
        Ok(VarPro {
            rho: functions.iter().map(|v| v.rho).collect(),
            b,
            scale,
            lo: [margin, margin],
            hi: [grid.lx - margin, grid.ly - margin],
        })
    }

    fn rows(&self) -> usize {
        self.rho.len()
    }

    /// Stacked `[Re A; Im A]`.
    fn matrix(&self, s: &[[f64; 2]]) -> DMatrix<f64> {
        let n = self.rows();
        let mut a = DMatrix::zeros(2 * n, s.len());
        for (l, r) in self.rho.iter().enumerate() {
            for (j, p) in s.iter().enumerate() {
                let z = (r[0] * p[0] + r[1] * p[1]).exp();
                a[(l, j)] = z.re;
                a[(n + l, j)] = z.im;
            }
        }
        a
    }

    fn project(&self, s: &[[f64; 2]]) -> Projection {
        let a = self.matrix(s);
        let svd = a.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let tol = smax * 1e-13 * (a.nrows() as f64);
        let lambda = if smax > 0.0 {
            svd.solve(&self.b, tol).unwrap_or_else(|_| DVector::zeros(s.len()))
        } else {
            DVector::zeros(s.len())
        };
        let u_full = svd.u.unwrap();
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| svd.singular_values[i] > tol)
            .collect();
        let u = u_full.select_columns(&keep);
        let residual = &a * &lambda - &self.b;
        Projection {
            lambda,
            residual,
            a,
            u,
        }
    }

    /// `(Λ₀, ‖A Λ₀ - R₀‖² / ‖R₀‖²)` at positions `s`.
    pub fn fit(&self, s: &[[f64; 2]]) -> (Vec<f64>, f64) {
        let p = self.project(s);
        (p.lambda.iter().copied().collect(), self.relative(&p.residual))
    }

    pub fn objective(&self, s: &[[f64; 2]]) -> f64 {
        self.fit(s).1
    }

    fn relative(&self, r: &DVector<f64>) -> f64 {
        if self.scale > 0.0 {
            r.norm_squared() / self.scale
        } else {
            r.norm_squared()
        }
    }

    /// Kaufman Jacobian `P⊥ (∂A/∂s_{jd}) Λ₀` of the residual.
    fn jacobian(&self, s: &[[f64; 2]], p: &Projection) -> DMatrix<f64> {
        let n = self.rows();
        let m = s.len();
        let mut j = DMatrix::zeros(2 * n, 2 * m);
        for (src, _) in s.iter().enumerate() {
            for d in 0..2 {
                let col = 2 * src + d;
                for (l, r) in self.rho.iter().enumerate() {
                    let z = Complex64::new(p.a[(l, src)], p.a[(n + l, src)]) * r[d] * p.lambda[src];
                    j[(l, col)] = z.re;
                    j[(n + l, col)] = z.im;
                }
            }
        }
        let ut_j = p.u.tr_mul(&j);
        j - &p.u * ut_j
    }

    fn clamp(&self, s: &mut [[f64; 2]]) {
        for p in s {
            for d in 0..2 {
                p[d] = p[d].clamp(self.lo[d], self.hi[d]);
            }
        }
    }

    /// Levenberg–Marquardt from `start`; returns positions and relative objective.
    pub fn refine(&self, start: &[[f64; 2]], max_iter: usize, step_tolerance: f64) -> (Vec<[f64; 2]>, f64) {
        let mut s = start.to_vec();
        self.clamp(&mut s);
        let diag = (self.hi[0] - self.lo[0]).hypot(self.hi[1] - self.lo[1]);
        let mut p = self.project(&s);
        let mut f = self.relative(&p.residual);
        let mut mu = -1.0;
        let mut stalls = 0;
        for _ in 0..max_iter {
            if f < 1e-30 {
                break;
            }
            let jac = self.jacobian(&s, &p);
            let jtj = jac.tr_mul(&jac);
            let g = jac.tr_mul(&p.residual);
            let dmax = jtj.diagonal().max();
            if !(dmax > 0.0) || !dmax.is_finite() {
                break;
            }
            if mu < 0.0 {
                mu = 1e-3;
            }
            let mut accepted = false;
            for _ in 0..30 {
                let mut lhs = jtj.clone();
                for i in 0..lhs.nrows() {
                    lhs[(i, i)] += mu * jtj[(i, i)].max(1e-12 * dmax);
                }
                let Some(step) = lhs.cholesky().map(|c| c.solve(&(-&g))) else {
                    mu *= 10.0;
                    continue;
                };
                let mut trial = s.clone();
                for (i, q) in trial.iter_mut().enumerate() {
                    q[0] += step[2 * i];
                    q[1] += step[2 * i + 1];
                }
                self.clamp(&mut trial);
                let moved = trial
                    .iter()
                    .zip(&s)
                    .map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1]))
                    .fold(0.0, f64::max);
                let tp = self.project(&trial);
                let tf = self.relative(&tp.residual);
                if tf < f {
                    let gain = (f - tf) / f;
                    s = trial;
                    p = tp;
                    f = tf;
                    mu = (mu / 3.0).max(1e-12);
                    accepted = true;
                    if moved < step_tolerance * diag || gain < 1e-15 {
                        stalls += 1;
                    } else {
                        stalls = 0;
                    }
                    break;
                }
                if moved < step_tolerance * diag {
                    break;
                }
                mu *= 4.0;
            }
            if !accepted || stalls >= 3 {
                break;
            }
        }
        (s, f)
    }
}

/// Merges close pairs then drops faint sources.
fn prune(s: &[[f64; 2]], lambda: &[f64], radius: f64, floor: f64) -> (Vec<[f64; 2]>, Vec<f64>, usize, usize) {
    let mut s = s.to_vec();
    let mut lambda = lambda.to_vec();
    let mut merged = 0;
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                let d = (s[i][0] - s[j][0]).hypot(s[i][1] - s[j][1]);
                if d < radius && best.is_none_or(|b| d < b.2) {
                    best = Some((i, j, d));
                }
            }
        }
        let Some((i, j, _)) = best else { break };
        let (wi, wj) = (lambda[i].abs(), lambda[j].abs());
        let t = if wi + wj > 0.0 { wj / (wi + wj) } else { 0.5 };
        s[i] = [s[i][0] + t * (s[j][0] - s[i][0]), s[i][1] + t * (s[j][1] - s[i][1])];
        lambda[i] += lambda[j];
        s.remove(j);
        lambda.remove(j);
        merged += 1;
    }
    let big = lambda.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let keep: Vec<usize> = (0..s.len()).filter(|&i| lambda[i].abs() >= floor * big && big > 0.0).collect();
    let dropped = s.len() - keep.len();
    (
        keep.iter().map(|&i| s[i]).collect(),
        keep.iter().map(|&i| lambda[i]).collect(),
        merged,
        dropped,
    )
}

fn random_positions(rng: &mut ChaCha8Rng, m: usize, hi: [f64; 2]) -> Vec<[f64; 2]> {
    (0..m)
        .map(|_| [rng.random_range(0.02..0.98) * hi[0], rng.random_range(0.02..0.98) * hi[1]])
        .collect()
}

/// Positions and `Λ₀` from `R₀` over `3M` zero-mode test functions.
///
/// Starts from `M` sources, merging and dropping per round until stable.
/// Every source count is then revisited by removing single sources from the
/// next larger fit and by adding one to the next smaller fit; the smallest
/// count within `ELIMINATION_RATIO` of the best objective is returned.
pub fn locate_sources(
    r0: &[Complex64],
    functions: &[CgoFunction],
    grid: &Grid2D,
    opts: &LocateOptions,
) -> Result<Located> {
    if opts.max_sources == 0 {
        return Err(Error::InvalidParameter("M must be at least 1".into()));
    }
    if r0.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidParameter("non-finite R₀".into()));
    }
    let vp = VarPro::new(r0, functions, grid)?;
    let none = Located {
        detected: false,
        positions: Vec::new(),
        lambda0: Vec::new(),
        objective: 1.0,
        rounds: Vec::new(),
    };
    if vp.scale == 0.0 {
        return Ok(none);
    }
    let radius = opts.merge_radius * grid.diag();
    let mut best = Fits::new(opts.max_sources);
    // Only configurations the pruning step would leave unchanged are kept.
    let offer = |best: &mut Fits, s: Vec<[f64; 2]>, f: f64| {
        let (lambda, _) = vp.fit(&s);
        let (_, _, merged, dropped) = prune(&s, &lambda, radius, opts.intensity_floor);
        merged + dropped == 0 && best.offer(s, f)
    };
    let mut rounds = Vec::new();
    let mut m = opts.max_sources;
    let mut warm: Option<Vec<[f64; 2]>> = None;
    for round in 0..=opts.max_sources {
        let starts = random_starts(&vp, m, opts.restarts.max(1), opts.seed, round as u64, warm.take());
        let results = search(&vp, m, starts, opts, &mut rounds);
        let (s, f) = results.into_iter().min_by(|a, b| a.1.total_cmp(&b.1)).expect("at least one start");
        let (lambda, _) = vp.fit(&s);
        let (ps, _, merged, dropped) = prune(&s, &lambda, radius, opts.intensity_floor);
        let last = rounds.last_mut().expect("search records a round");
        last.merged = merged;
        last.dropped = dropped;
        if merged + dropped == 0 {
            best.offer(s, f);
            break;
        }
        if ps.is_empty() {
            break;
        }
        m = ps.len();
        warm = Some(ps);
    }

    let extra = opts.restarts.div_ceil(4).max(1);
    for m in (1..opts.max_sources).rev() {
        if let Some((s, _)) = best.at(m + 1) {
            let starts = (0..=m)
                .map(|j| s.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, p)| *p).collect())
                .collect();
            for (s, f) in search(&vp, m, starts, opts, &mut rounds) {
                offer(&mut best, s, f);
            }
        }
    }
    for m in 2..=opts.max_sources {
        if let Some((s, _)) = best.at(m - 1) {
            let mut starts = random_starts(&vp, 1, extra, opts.seed, (1 << 16) + m as u64, None);
            for st in &mut starts {
                st.splice(0..0, s.iter().copied());
            }
            for (s, f) in search(&vp, m, starts, opts, &mut rounds) {
                offer(&mut best, s, f);
            }
        }
    }

    let Some((s, f)) = best.select() else {
        return Ok(Located { rounds, ..none });
    };
    let (lambda, _) = vp.fit(&s);
    let positive = lambda.iter().any(|&x| x > 0.0);
    Ok(Located {
        detected: positive,
        positions: if positive { s } else { Vec::new() },
        lambda0: if positive { lambda } else { Vec::new() },
        objective: f,
        rounds,
    })
}

/// Best fit found so far at each source count.
struct Fits(Vec<Option<(Vec<[f64; 2]>, f64)>>);

impl Fits {
    fn new(max: usize) -> Self {
        Fits(vec![None; max + 1])
    }

    fn at(&self, m: usize) -> Option<&(Vec<[f64; 2]>, f64)> {
        self.0.get(m)?.as_ref()
    }

    /// Returns whether the fit improved on the stored one.
    fn offer(&mut self, s: Vec<[f64; 2]>, f: f64) -> bool {
        let slot = &mut self.0[s.len()];
        if slot.as_ref().is_none_or(|(_, g)| f < *g) {
            *slot = Some((s, f));
            true
        } else {
            false
        }
    }

    fn select(&self) -> Option<(Vec<[f64; 2]>, f64)> {
        let floor = self.0.iter().flatten().map(|(_, f)| *f).fold(f64::INFINITY, f64::min);
        if !(floor < 1.0 - 1e-9) {
            return None;
        }
        self.0.iter().flatten().find(|(_, f)| !worse(*f, floor)).cloned()
    }
}

fn worse(f: f64, reference: f64) -> bool {
    f.max(OBJECTIVE_FLOOR) > ELIMINATION_RATIO * reference.max(OBJECTIVE_FLOOR)
}

fn random_starts(
    vp: &VarPro,
    m: usize,
    count: usize,
    seed: u64,
    stream: u64,
    warm: Option<Vec<[f64; 2]>>,
) -> Vec<Vec<[f64; 2]>> {
    (0..count)
        .map(|i| match (i, &warm) {
            (0, Some(w)) => w.clone(),
            _ => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream((stream << 32) | i as u64);
                random_positions(&mut rng, m, vp.hi)
            }
        })
        .collect()
}

/// Refines every start and records the round.
fn search(
    vp: &VarPro,
    m: usize,
    starts: Vec<Vec<[f64; 2]>>,
    opts: &LocateOptions,
    rounds: &mut Vec<LocateRound>,
) -> Vec<(Vec<[f64; 2]>, f64)> {
    let results: Vec<(Vec<[f64; 2]>, f64)> = starts
        .par_iter()
        .map(|s0| vp.refine(s0, opts.max_iter, opts.step_tolerance))
        .collect();
    let objectives: Vec<f64> = results.iter().map(|r| r.1).collect();
    let best = (0..results.len())
        .min_by(|&a, &b| objectives[a].total_cmp(&objectives[b]))
        .unwrap();
    rounds.push(LocateRound {
        sources: m,
        objective: objectives[best],
        restart_objectives: objectives,
        merged: 0,
        dropped: 0,
    });
    results
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cgo::make_zero_mode_functions;

    fn synthetic(s: &[[f64; 2]], lambda: &[f64], fs: &[CgoFunction]) -> Vec<Complex64> {
        fs.iter()
            .map(|v| {
                s.iter()
                    .zip(lambda)
                    .map(|(p, l)| (v.rho[0] * p[0] + v.rho[1] * p[1]).exp() * l)
                    .sum()
            })
            .collect()
    }

    fn setup() -> (Grid2D, Vec<CgoFunction>) {
        let grid = Grid2D::new(1000.0, 1000.0, 101, 101).unwrap();
        let fs = make_zero_mode_functions(4, &grid, 1.0).unwrap();
        (grid, fs)
    }

    #[test]
    fn objective_vanishes_at_truth() {
        let (grid, fs) = setup();
        let s = [[200.0, 300.0], [700.0, 600.0]];
        let r = synthetic(&s, &[1.0, 2.0], &fs);
        let vp = VarPro::new(&r, &fs, &grid).unwrap();
        let (lambda, f) = vp.fit(&s);
        assert!(f < 1e-24);
        assert!((lambda[0] - 1.0).abs() < 1e-10 && (lambda[1] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn refine_converges_from_nearby_start() {
        let (grid, fs) = setup();
        let s = [[200.0, 300.0], [700.0, 600.0], [450.0, 850.0]];
        let r = synthetic(&s, &[1.0, 2.0, 0.5], &fs);
        let vp = VarPro::new(&r, &fs, &grid).unwrap();
        let (out, f) = vp.refine(&[[230.0, 280.0], [680.0, 640.0], [420.0, 800.0]], 300, 1e-12);
        assert!(f < 1e-20, "objective {f}");
        for (a, b) in out.iter().zip(&s) {
            assert!((a[0] - b[0]).hypot(a[1] - b[1]) < 1e-6);
        }
    }

    #[test]
    fn overcomplete_model_is_pruned_to_truth() {
        let (grid, fs) = setup();
        let s = [[250.0, 250.0], [750.0, 300.0]];
        let r = synthetic(&s, &[1.0, 1.5], &fs);
        let opts = LocateOptions {
            max_sources: 4,
            restarts: 20,
            ..Default::default()
        };
        let out = locate_sources(&r, &fs, &grid, &opts).unwrap();
        assert!(out.detected);
        assert_eq!(out.positions.len(), 2);
        assert!(crate::inversion::metrics::max_position_distance(&s, &out.positions) < 1e-3);
    }

    #[test]
    fn selection_prefers_the_smallest_adequate_count() {
        let mut fits = Fits::new(4);
        fits.offer(vec![[1.0, 1.0]], 1e-3);
        fits.offer(vec![[1.0, 1.0]; 2], 5e-9);
        fits.offer(vec![[1.0, 1.0]; 3], 1e-9);
        fits.offer(vec![[1.0, 1.0]; 4], 9e-10);
        assert_eq!(fits.select().unwrap().0.len(), 2);
        assert!(!fits.offer(vec![[2.0, 2.0]; 2], 6e-9));
        fits.offer(vec![[1.0, 1.0]; 3], 1e-30);
        assert_eq!(fits.select().unwrap().0.len(), 3);
    }

    #[test]
    fn zero_data_means_no_source() {
        let (grid, fs) = setup();
        let r = vec![Complex64::new(0.0, 0.0); fs.len()];
        let out = locate_sources(&r, &fs, &grid, &LocateOptions::default()).unwrap();
        assert!(!out.detected);
        assert!(out.positions.is_empty());
    }

    #[test]
    fn prune_merges_and_drops() {
        let s = [[0.0, 0.0], [1.0, 0.0], [100.0, 0.0], [50.0, 50.0]];
        let (ps, pl, merged, dropped) = prune(&s, &[1.0, 3.0, 2.0, 0.001], 5.0, 0.01);
        assert_eq!((merged, dropped), (1, 1));
        assert_eq!(pl, vec![4.0, 2.0]);
        assert!((ps[0][0] - 0.75).abs() < 1e-15);
    }
}
