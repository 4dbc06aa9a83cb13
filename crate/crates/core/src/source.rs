//! Point-source sets `θ = {m, (s_j, g_j)}`.

use crate::error::{Error, Result};
use crate::heat::Grid2D;
use crate::quad;
use crate::scenario::PaperIntensity;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// A time-dependent emission rate, zero outside `[0, T*]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intensity {
    /// One of the closed-form reference intensities.
    Named(PaperIntensity),
    /// Samples at `0, dt, 2dt, ...`, linearly interpolated.
    Tabulated { dt: f64, values: Vec<f64> },
    /// `base(t) * exp(log_scale + rate * t)`.
    Modulated {
        base: Box<Intensity>,
        log_scale: f64,
        rate: f64,
    },
}

impl Intensity {
    pub fn eval(&self, t: f64, t_star: f64) -> f64 {
        if !(0.0..=t_star).contains(&t) {
            return 0.0;
        }
        match self {
            Intensity::Named(name) => name.eval(t, t_star),
            Intensity::Tabulated { dt, values } => interpolate(*dt, values, t),
            Intensity::Modulated {
                base,
                log_scale,
                rate,
            } => base.eval(t, t_star) * (log_scale + rate * t).exp(),
        }
    }
}

fn interpolate(dt: f64, values: &[f64], t: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let r = t / dt;
    let i = r.floor() as usize;
    if i + 1 >= values.len() {
        return if (r - (values.len() - 1) as f64).abs() < 1e-9 {
            values[values.len() - 1]
        } else {
            0.0
        };
    }
    let f = r - i as f64;
    values[i] * (1.0 - f) + values[i + 1] * f
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointSource {
    pub position: [f64; 2],
    pub intensity: Intensity,
}

/// Source count, positions and intensities; the intensities are inactive
/// after `t_star`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceSet {
    pub t_star: f64,
    pub sources: Vec<PointSource>,
}

impl SourceSet {
    pub fn m(&self) -> usize {
        self.sources.len()
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.sources.iter().map(|s| s.position).collect()
    }

    /// Checks distinct interior positions and finite intensities.
    pub fn validate(&self, grid: &Grid2D) -> Result<()> {
        for (j, s) in self.sources.iter().enumerate() {
            if !grid.contains_strictly(s.position) {
                return Err(Error::SourceOutsideDomain {
                    x: s.position[0],
                    y: s.position[1],
                });
            }
            for (l, o) in self.sources.iter().enumerate().skip(j + 1) {
                if s.position == o.position {
                    return Err(Error::InvalidParameter(format!(
                        "sources {j} and {l} share position {:?}",
                        s.position
                    )));
                }
            }
        }
        Ok(())
    }

    /// `λ_j(α) = ∫_0^{T*} g_j(t) e^{αt} dt` for every source.
    pub fn fourier_coefficients(&self, alpha: Complex64) -> Vec<Complex64> {
        self.sources
            .iter()
            .map(|s| {
                quad::integrate_complex(0.0, self.t_star, quad::DEFAULT_PANELS, |t| {
                    Complex64::from(s.intensity.eval(t, self.t_star)) * (alpha * t).exp()
                })
            })
            .collect()
    }

    /// Total emitted masses `λ_j(0)`.
    pub fn total_intensities(&self) -> Vec<f64> {
        self.fourier_coefficients(Complex64::new(0.0, 0.0))
            .into_iter()
            .map(|c| c.re)
            .collect()
    }

    /// Intensities sampled on `n` uniform points of `[0, T*]`.
    pub fn sample_intensities(&self, n: usize) -> Vec<Vec<f64>> {
        let ts = uniform_times(self.t_star, n);
        self.sources
            .iter()
            .map(|s| ts.iter().map(|&t| s.intensity.eval(t, self.t_star)).collect())
            .collect()
    }
}

/// `n` uniform points covering `[0, t_star]` inclusive.
pub fn uniform_times(t_star: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.0],
        _ => (0..n).map(|i| t_star * i as f64 / (n - 1) as f64).collect(),
    }
}
