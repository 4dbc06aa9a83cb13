//! End-to-end inversion of one measured trace.

use super::approx::{approximate_intensities, ApproxResult};
use super::fourier::{assemble_mode_system, inverse_fourier_intensities, recover_fourier, FourierSolve, FourierTable, Frequency};
use super::locate::{locate_sources, LocateOptions, LocateRound};
use super::metrics::{assign, intensity_l2_error, max_position_distance, position_error, relative_l2, ErrorMetrics};
use super::spectral::{min_pairwise_distance, stability_constant};
use crate::cgo::{base_scale, make_mode_functions, make_zero_mode_functions, CgoFunction};
use crate::control::ControlFitter;
use crate::error::{Error, Result};
use crate::functional::{RFunctional, RValue};
use crate::heat::BoundaryTrace;
use crate::source::{uniform_times, SourceSet};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ifourier,
    Approx,
    Both,
}

impl Method {
    pub fn ifourier(self) -> bool {
        matches!(self, Method::Ifourier | Method::Both)
    }

    pub fn approx(self) -> bool {
        matches!(self, Method::Approx | Method::Both)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ifourier" => Ok(Method::Ifourier),
            "approx" => Ok(Method::Approx),
            "both" => Ok(Method::Both),
            _ => Err(Error::InvalidParameter(format!(
                "unknown method {s:?}, expected ifourier, approx or both"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InversionConfig {
    /// `M`.
    pub max_sources: usize,
    pub restarts: usize,
    /// `K`.
    pub modes: usize,
    /// `L`.
    pub approx_order: usize,
    pub method: Method,
    pub seed: u64,
    /// Intensity samples on `[0, T*]`.
    pub samples: usize,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            max_sources: 7,
            restarts: 50,
            modes: 8,
            approx_order: 8,
            method: Method::Both,
            seed: 0,
            samples: 201,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_sources == 0 || self.restarts == 0 || self.modes == 0 || self.approx_order == 0 {
            return Err(Error::InvalidParameter("M, restarts, K and L must be at least 1".into()));
        }
        if self.samples < 2 {
            return Err(Error::InvalidParameter("need at least 2 intensity samples".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Relative zero-mode objective of the accepted solution.
    pub objective: f64,
    pub rounds: Vec<LocateRound>,
    pub modes: Vec<FourierSolve>,
    /// `Σ_k ‖A_k Λ_k - R_k‖² / Σ_k ‖R_k‖²` over all evaluated modes.
    pub coupled_objective: Option<f64>,
    pub min_distance: Option<f64>,
    /// `C(m; δ, r₀)`; `None` when vacuous.
    pub stability_constant: Option<f64>,
    pub approx_residual: Option<f64>,
    pub approx_iterations: Option<usize>,
    pub flagged_r: usize,
    pub max_fit_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityCurves {
    pub times: Vec<f64>,
    pub ifourier: Option<Vec<Vec<f64>>>,
    pub approx: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InversionResult {
    pub detected: bool,
    pub m: usize,
    pub positions: Vec<[f64; 2]>,
    pub lambda0: Vec<f64>,
    pub fourier: Option<FourierTable>,
    pub approx_coefficients: Option<Vec<Vec<f64>>>,
    pub intensities: IntensityCurves,
    pub diagnostics: Diagnostics,
    pub r_values: Vec<RValue>,
    pub errors: Option<ErrorMetrics>,
}

fn evaluate(rf: &RFunctional, functions: &[CgoFunction], k: usize, first_id: usize) -> Result<Vec<RValue>> {
    functions
        .par_iter()
        .enumerate()
        .map(|(l, v)| rf.evaluate_labelled(v, first_id + l, k, l))
        .collect()
}

/// Zero-mode and mode-`k` test functions, adapted to the cache grid.
pub fn test_functions(rf: &RFunctional, config: &InversionConfig) -> Result<Vec<Vec<CgoFunction>>> {
    let grid = rf.grid();
    let mesh = rf.mesh();
    let kappa = rf.kappa();
    let mut out = vec![make_zero_mode_functions(config.max_sources, grid, kappa)?];
    for k in 1..=config.modes {
        out.push(make_mode_functions(k, config.max_sources, mesh.t_star, kappa, grid)?);
    }
    Ok(out.into_iter().map(|fs| fs.iter().map(|v| rf.adapt(v)).collect()).collect())
}

/// Runs location and the selected intensity reconstructions.
pub fn run_inversion(trace: &BoundaryTrace, fitter: &ControlFitter, config: &InversionConfig) -> Result<InversionResult> {
    config.validate()?;
    let rf = RFunctional::new(trace, fitter)?;
    let grid = *rf.grid();
    let mesh = *rf.mesh();
    let kappa = rf.kappa();
    let families = test_functions(&rf, config)?;
    let mut r_values = evaluate(&rf, &families[0], 0, 0)?;
    let r0: Vec<Complex64> = r_values.iter().map(|r| r.value).collect();
    let located = locate_sources(
        &r0,
        &families[0],
        &grid,
        &LocateOptions {
            max_sources: config.max_sources,
            restarts: config.restarts,
            seed: config.seed,
            ..Default::default()
        },
    )?;
    let times = uniform_times(mesh.t_star, config.samples);
    let mut diagnostics = Diagnostics {
        objective: located.objective,
        rounds: located.rounds.clone(),
        modes: Vec::new(),
        coupled_objective: None,
        min_distance: None,
        stability_constant: None,
        approx_residual: None,
        approx_iterations: None,
        flagged_r: 0,
        max_fit_residual: 0.0,
    };
    let mut result = InversionResult {
        detected: located.detected,
        m: located.positions.len(),
        positions: located.positions.clone(),
        lambda0: located.lambda0.clone(),
        fourier: None,
        approx_coefficients: None,
        intensities: IntensityCurves {
            times: times.clone(),
            ifourier: None,
            approx: None,
        },
        diagnostics: diagnostics.clone(),
        r_values: Vec::new(),
        errors: None,
    };
    if !located.detected {
        diagnostics.flagged_r = r_values.iter().filter(|r| r.flagged).count();
        diagnostics.max_fit_residual = r_values.iter().map(|r| r.fit_residual).fold(0.0, f64::max);
        result.diagnostics = diagnostics;
        result.r_values = r_values;
        return Ok(result);
    }
    let s = &located.positions;
    let m = s.len();
    if m > 1 {
        let delta = min_pairwise_distance(s);
        diagnostics.min_distance = Some(delta);
        diagnostics.stability_constant = stability_constant(m, delta, base_scale(&grid)).ok();
    } else {
        diagnostics.stability_constant = Some(1.0);
    }

    if config.method.ifourier() {
        let mut modes = vec![located.lambda0.iter().map(|&x| Complex64::new(x, 0.0)).collect::<Vec<_>>()];
        let sys0 = assemble_mode_system(0, &families[0], s, &r0)?;
        let lam0 = nalgebra::DVector::from_vec(modes[0].clone());
        let mut misfit = (&sys0.a * &lam0 - &sys0.r).norm_squared();
        let mut total = sys0.r.norm_squared();
        for k in 1..=config.modes {
            let vals = evaluate(&rf, &families[k], k, r_values.len())?;
            let rk: Vec<Complex64> = vals.iter().map(|r| r.value).collect();
            r_values.extend(vals);
            let sys = assemble_mode_system(k, &families[k], s, &rk)?;
            let sol = recover_fourier(&sys)?;
            let lam = nalgebra::DVector::from_column_slice(&sol.lambda);
            misfit += (&sys.a * &lam - &sys.r).norm_squared();
            total += sys.r.norm_squared();
            modes.push(sol.lambda.clone());
            diagnostics.modes.push(sol);
        }
        diagnostics.coupled_objective = Some(if total > 0.0 { misfit / total } else { 0.0 });
        let table = FourierTable {
            t_star: mesh.t_star,
            frequency: Frequency::Half,
            modes,
        };
        result.intensities.ifourier = Some(inverse_fourier_intensities(&table, &times)?);
        result.fourier = Some(table);
    }
    if config.method.approx() {
        let ap: ApproxResult = approximate_intensities(s, trace, &grid, &mesh, kappa, config.approx_order, &times)?;
        diagnostics.approx_residual = Some(ap.relative_residual);
        diagnostics.approx_iterations = Some(ap.iterations);
        result.intensities.approx = Some(ap.intensities);
        result.approx_coefficients = Some(ap.coefficients);
    }
    diagnostics.flagged_r = r_values.iter().filter(|r| r.flagged).count();
    diagnostics.max_fit_residual = r_values.iter().map(|r| r.fit_residual).fold(0.0, f64::max);
    result.diagnostics = diagnostics;
    result.r_values = r_values;
    Ok(result)
}

/// Errors of `result` against the true source set.
pub fn compare_with_truth(result: &InversionResult, truth: &SourceSet) -> ErrorMetrics {
    let ts = truth.positions();
    let pairs = assign(&ts, &result.positions);
    let lambda_true = truth.total_intensities();
    let lambda_est: Vec<f64> = pairs.iter().map(|p| p.map_or(0.0, |j| result.lambda0[j])).collect();
    let times = &result.intensities.times;
    let curves = |set: &Option<Vec<Vec<f64>>>| -> Vec<Option<f64>> {
        pairs
            .iter()
            .zip(&truth.sources)
            .map(|(p, src)| {
                let est = set.as_ref()?.get((*p)?)?;
                let g: Vec<f64> = times.iter().map(|&t| src.intensity.eval(t, truth.t_star)).collect();
                Some(intensity_l2_error(&g, est))
            })
            .collect()
    };
    ErrorMetrics {
        m_true: truth.m(),
        m_estimated: result.m,
        position_error: if ts.is_empty() { 0.0 } else { position_error(&ts, &result.positions) },
        max_position_distance: max_position_distance(&ts, &result.positions),
        lambda0_error: if ts.is_empty() { 0.0 } else { relative_l2(&lambda_true, &lambda_est) },
        ifourier_errors: curves(&result.intensities.ifourier),
        approx_errors: curves(&result.intensities.approx),
    }
}

/// CSV `t,g_true,g_if,g_appr` for estimated source `j`; missing columns are left empty.
pub fn write_intensity_csv(result: &InversionResult, j: usize, truth: Option<&SourceSet>, mut w: impl Write) -> Result<()> {
    let matched = truth.and_then(|set| {
        let pairs = assign(&set.positions(), &result.positions);
        let i = pairs.iter().position(|p| *p == Some(j))?;
        Some((&set.sources[i].intensity, set.t_star))
    });
    writeln!(w, "t,g_true,g_if,g_appr")?;
    let cell = |c: Option<f64>| c.map_or(String::new(), |v| format!("{v:.10e}"));
    for (n, &t) in result.intensities.times.iter().enumerate() {
        let g_true = matched.map(|(g, ts)| g.eval(t, ts));
        let g_if = result.intensities.ifourier.as_ref().map(|c| c[j][n]);
        let g_ap = result.intensities.approx.as_ref().map(|c| c[j][n]);
        writeln!(w, "{t},{},{},{}", cell(g_true), cell(g_if), cell(g_ap))?;
    }
    Ok(())
}
