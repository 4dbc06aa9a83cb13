//! The data functional
//! `R(v) = ∫_Ω u(T*) v(T*) dx + κ ∫_{Σ⁻} φ ∂v/∂n`, with the interior term
//! replaced by the boundary-control integral `∫_{Σ⁺} φ ω`.
//!
//! The control reproduces `v(T*)` only up to a residual `ψ(T*) − v(T*)`
//! that sits in a layer along `∂Ω`. Its pairing with `u(T*)` is estimated
//! from the trace at `T*` extended along the normals and subtracted.

use crate::cgo::CgoFunction;
use crate::control::{basis_projections, control_term_from_projections, ComplexControl, ControlFitter};
use crate::error::{Error, Result};
use crate::heat::{BoundaryFlux, BoundaryTrace, Edge, Field, Grid2D, TimeMesh};
use crate::quad;
use crate::source::SourceSet;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Default relative fit residual above which a value is flagged.
pub const DEFAULT_QUALITY_THRESHOLD: f64 = 1e-2;

/// One evaluation of `R(v)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RValue {
    pub id: usize,
    pub k: usize,
    pub l: usize,
    pub value: Complex64,
    pub boundary_term: Complex64,
    pub control_term: Complex64,
    /// Estimate of `∫_Ω u(T*) (ψ(T*) − v(T*))`, already subtracted from `control_term`.
    pub defect: Complex64,
    /// Relative `L²(Ω)` residual of the control fit.
    pub fit_residual: f64,
    /// Fit residual exceeded the quality threshold.
    pub flagged: bool,
}

fn check_covers(trace: &BoundaryTrace, mesh: &TimeMesh) -> Result<()> {
    let times = trace.times();
    if times.len() != mesh.levels() || !crate::heat::same_times(times, &mesh.times()) {
        return Err(Error::MeshMismatch(format!(
            "trace has {} levels, mesh has {}",
            times.len(),
            mesh.levels()
        )));
    }
    Ok(())
}

/// `κ ∫_{Σ⁻} φ ∂v/∂n dσ dt`.
///
/// Arclength uses the trapezoid rule and `∂v/∂n` the centered difference
/// `sinh(h ρ·n)/h · v`; time pairs level averages of `φ` and `e^{αt}`
/// over each step. For a test function from [`CgoFunction::adapted_to`]
/// this is the boundary term of the exact discrete identity.
pub fn r_boundary_term(trace: &BoundaryTrace, mesh: &TimeMesh, v: &CgoFunction, kappa: f64) -> Result<Complex64> {
    check_covers(trace, mesh)?;
    let grid = *trace.grid();
    let star = mesh.star_level();
    let minus = trace.window(0..=star);
    let times = minus.times();
    let nt = minus.n_times();
    let top = v.max_exponent_on(&grid, 0.0).max(v.max_exponent_on(&grid, mesh.t_star));
    if top > crate::cgo::MAX_EXPONENT {
        return Err(Error::Overflow { re: top });
    }
    let e_t: Vec<Complex64> = times.iter().map(|&t| (v.alpha * t).exp()).collect();
    // weight of φ at level n: Σ over adjacent steps of Δt/4 (eⁿ + eⁿ⁺¹)
    let mut temporal = vec![Complex64::new(0.0, 0.0); nt];
    for n in 0..nt.saturating_sub(1) {
        let q = 0.25 * (times[n + 1] - times[n]) * (e_t[n] + e_t[n + 1]);
        temporal[n] += q;
        temporal[n + 1] += q;
    }
    let mut sum = Complex64::new(0.0, 0.0);
    for e in Edge::ALL {
        let dn = v.discrete_normal_factor(e.normal(), e.normal_spacing(&grid));
        if dn == Complex64::new(0.0, 0.0) {
            continue;
        }
        let data = minus.edge_data(e);
        let mut edge_sum = Complex64::new(0.0, 0.0);
        for s in 0..e.len(&grid) {
            let row = &data[s * nt..(s + 1) * nt];
            let mut acc = Complex64::new(0.0, 0.0);
            for (phi, tf) in row.iter().zip(&temporal) {
                acc += *phi * tf;
            }
            let x = e.point(&grid, s);
            let spatial = (v.rho[0] * x[0] + v.rho[1] * x[1]).exp();
            edge_sum += e.arc_weight(&grid, s) * spatial * acc;
        }
        sum += dn * edge_sum;
    }
    Ok(kappa * sum)
}

/// `∫_{Σ⁺} φ ω dσ dt` for a real flux sampled on the `Σ⁺` levels.
pub fn r_control_term(trace: &BoundaryTrace, mesh: &TimeMesh, omega: &BoundaryFlux) -> Result<f64> {
    check_covers(trace, mesh)?;
    let plus = trace.window(mesh.star_level()..=mesh.levels() - 1);
    plus.staggered_inner(omega)
}

/// Complex flux given as real and imaginary parts.
pub fn r_control_term_complex(
    trace: &BoundaryTrace,
    mesh: &TimeMesh,
    omega_re: &BoundaryFlux,
    omega_im: &BoundaryFlux,
) -> Result<Complex64> {
    Ok(Complex64::new(
        r_control_term(trace, mesh, omega_re)?,
        r_control_term(trace, mesh, omega_im)?,
    ))
}

/// Evaluator of `R(v)` for one measured trace.
///
/// The projections `∫_{Σ⁺} φ ω_η` are computed once, so each value costs
/// one control fit plus the `Σ⁻` quadrature.
pub struct RFunctional<'a> {
    trace: &'a BoundaryTrace,
    mesh: TimeMesh,
    kappa: f64,
    fitter: &'a ControlFitter,
    projections: Vec<f64>,
    extension: Field,
    extension_projections: Vec<f64>,
    pub quality_threshold: f64,
    /// Subtract the estimated control defect.
    pub defect_correction: bool,
}

impl<'a> RFunctional<'a> {
    pub fn new(trace: &'a BoundaryTrace, fitter: &'a ControlFitter) -> Result<Self> {
        let cache = fitter.cache();
        let mesh = cache.mesh;
        if trace.grid() != &cache.grid {
            return Err(Error::FingerprintMismatch {
                cache: cache.fingerprint.clone(),
                data: format!("trace on grid {:?}", trace.grid()),
            });
        }
        check_covers(trace, &mesh)?;
        let plus = trace.window(mesh.star_level()..=mesh.levels() - 1);
        let projections = basis_projections(&plus, cache)?;
        let extension = normal_extension(trace, mesh.star_level());
        let extension_projections = (0..cache.len())
            .map(|k| {
                let psi = Field {
                    grid: cache.grid,
                    values: cache.psi(k).to_vec(),
                };
                extension.dot(&psi)
            })
            .collect();
        Ok(RFunctional {
            trace,
            mesh,
            kappa: cache.kappa,
            fitter,
            projections,
            extension,
            extension_projections,
            quality_threshold: DEFAULT_QUALITY_THRESHOLD,
            defect_correction: true,
        })
    }

    pub fn grid(&self) -> &Grid2D {
        &self.fitter.cache().grid
    }

    pub fn mesh(&self) -> &TimeMesh {
        &self.mesh
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Grid-consistent counterpart of `v` on this cache's grid and `Σ⁻` step.
    pub fn adapt(&self, v: &CgoFunction) -> CgoFunction {
        v.adapted_to(&self.fitter.cache().grid, self.mesh.dt_minus())
    }

    /// Control fit for `v(·, T*)`.
    pub fn fit(&self, v: &CgoFunction) -> Result<ComplexControl> {
        let (re, im) = v.field_at(&self.fitter.cache().grid, self.mesh.t_star)?;
        self.fitter.fit_complex(&re, &im)
    }

    pub fn evaluate(&self, v: &CgoFunction) -> Result<RValue> {
        self.evaluate_labelled(v, 0, 0, 0)
    }

    pub fn evaluate_labelled(&self, v: &CgoFunction, id: usize, k: usize, l: usize) -> Result<RValue> {
        if (v.kappa - self.kappa).abs() > 1e-12 * self.kappa {
            return Err(Error::InvalidParameter(format!(
                "test function built for κ = {}, cache for κ = {}",
                v.kappa, self.kappa
            )));
        }
        let boundary_term = r_boundary_term(self.trace, &self.mesh, v, self.kappa)?;
        let (re, im) = v.field_at(&self.fitter.cache().grid, self.mesh.t_star)?;
        let fit = self.fitter.fit_complex(&re, &im)?;
        let control_term = control_term_from_projections(&fit, &self.projections);
        let fit_residual = fit.relative_residual();
        let defect = if self.defect_correction {
            let p = &self.extension_projections;
            let dot = |a: &[f64]| a.iter().zip(p).map(|(x, y)| x * y).sum::<f64>();
            Complex64::new(
                dot(&fit.re.a) - self.extension.dot(&re),
                dot(&fit.im.a) - self.extension.dot(&im),
            )
        } else {
            Complex64::new(0.0, 0.0)
        };
        Ok(RValue {
            id,
            k,
            l,
            value: boundary_term + (control_term - defect),
            boundary_term,
            control_term: control_term - defect,
            defect,
            fit_residual,
            flagged: fit_residual > self.quality_threshold,
        })
    }

    /// Values for a family of test functions of mode `k`.
    pub fn evaluate_family(&self, functions: &[CgoFunction], k: usize, first_id: usize) -> Result<Vec<RValue>> {
        functions
            .iter()
            .enumerate()
            .map(|(l, v)| self.evaluate_labelled(v, first_id + l, k, l))
            .collect()
    }
}

/// Trace at level `n` copied along the normal of the nearest edge.
///
/// Under a homogeneous Neumann condition this is the first-order
/// expansion of `u(·, t_n)` near `∂Ω`.
pub fn normal_extension(trace: &BoundaryTrace, n: usize) -> Field {
    let g = *trace.grid();
    let mut out = Field::zeros(g);
    for j in 0..g.ny {
        for i in 0..g.nx {
            let (edge, s) = [
                (i, Edge::West, j),
                (g.nx - 1 - i, Edge::East, j),
                (j, Edge::South, i),
                (g.ny - 1 - j, Edge::North, i),
            ]
            .into_iter()
            .min_by_key(|c| c.0)
            .map(|c| (c.1, c.2))
            .unwrap();
            out.values[g.index(i, j)] = trace.get(edge, s, n);
        }
    }
    out
}

/// Single evaluation of `R(v)`; batch callers should reuse [`RFunctional`].
pub fn evaluate_r(trace: &BoundaryTrace, v: &CgoFunction, fitter: &ControlFitter) -> Result<RValue> {
    RFunctional::new(trace, fitter)?.evaluate(v)
}

/// `Σ_j ∫_0^{T*} g_j(t) v(s_j, t) dt` by composite Gauss–Legendre.
pub fn oracle_r_direct(theta: &SourceSet, v: &CgoFunction) -> Result<Complex64> {
    let mut sum = Complex64::new(0.0, 0.0);
    for s in &theta.sources {
        let z = v.rho[0] * s.position[0] + v.rho[1] * s.position[1];
        if z.re > crate::cgo::MAX_EXPONENT {
            return Err(Error::Overflow { re: z.re });
        }
        let spatial = z.exp();
        let integral = quad::integrate_complex(0.0, theta.t_star, quad::DEFAULT_PANELS, |t| {
            s.intensity.eval(t, theta.t_star) * (v.alpha * t).exp()
        });
        sum += spatial * integral;
    }
    Ok(sum)
}

/// CSV with columns `id,k,l,re,im,residual,flagged`.
pub fn write_r_values_csv(values: &[RValue], mut w: impl Write) -> Result<()> {
    writeln!(w, "id,k,l,re,im,residual,flagged")?;
    for r in values {
        writeln!(
            w,
            "{},{},{},{:e},{:e},{:e},{}",
            r.id, r.k, r.l, r.value.re, r.value.im, r.fit_residual, r.flagged
        )?;
    }
    Ok(())
}
