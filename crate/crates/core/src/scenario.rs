//! Reference scenarios: the closed-form intensities, the source layouts
//! used for validation and synthetic measurement generation.

use crate::error::{Error, Result};
use crate::heat::{solve_forward, BoundaryTrace, Edge, Grid2D, TimeMesh};
use crate::source::{Intensity, PointSource, SourceSet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::str::FromStr;

/// Side length of the reference square domain (m).
pub const PAPER_SIDE: f64 = 1000.0;
/// Inactivity time, 38.4 h (s).
pub const PAPER_T_STAR: f64 = 138_240.0;
/// Observation horizon, 48 h (s).
pub const PAPER_T_FINAL: f64 = 172_800.0;
pub const PAPER_KAPPA: f64 = 1.0;

/// Default desk-scale discretization.
pub const DEFAULT_NODES: usize = 101;
pub const DEFAULT_NT_MINUS: usize = 320;
pub const DEFAULT_NT_PLUS: usize = 80;

/// Closed-form reference intensities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PaperIntensity {
    Q,
    G1,
    G2,
    G3,
    G4,
    G5,
    G6,
}

impl PaperIntensity {
    pub const SOURCES: [PaperIntensity; 6] = [
        PaperIntensity::G1,
        PaperIntensity::G2,
        PaperIntensity::G3,
        PaperIntensity::G4,
        PaperIntensity::G5,
        PaperIntensity::G6,
    ];

    pub fn eval(self, t: f64, t_star: f64) -> f64 {
        let q = 0.5 * (1.0 - ((t - 0.9 * t_star) / 21_600.0).tanh());
        match self {
            PaperIntensity::Q => q,
            PaperIntensity::G1 => {
                let a = 10.0 / t_star * (t - 36_000.0);
                let b = 15.0 / t_star * (t - 100_500.0);
                (3.0 + 1.5 * (2.0 * PI * t / t_star).sin()
                    + 3.0 * (-a * a).exp()
                    + 2.5 * (-b * b).exp())
                    * q
            }
            PaperIntensity::G2 => (5.0 + (4.0 * PI * t / t_star).sin()) * q,
            PaperIntensity::G3 => {
                let r = t / t_star;
                6.0 * (1.0 - r * r) * q
            }
            PaperIntensity::G4 => 5.0 * q,
            PaperIntensity::G5 | PaperIntensity::G6 => 4.0 * q,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PaperIntensity::Q => "q",
            PaperIntensity::G1 => "g1",
            PaperIntensity::G2 => "g2",
            PaperIntensity::G3 => "g3",
            PaperIntensity::G4 => "g4",
            PaperIntensity::G5 => "g5",
            PaperIntensity::G6 => "g6",
        }
    }
}

impl FromStr for PaperIntensity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "q" => PaperIntensity::Q,
            "g1" => PaperIntensity::G1,
            "g2" => PaperIntensity::G2,
            "g3" => PaperIntensity::G3,
            "g4" => PaperIntensity::G4,
            "g5" => PaperIntensity::G5,
            "g6" => PaperIntensity::G6,
            other => return Err(Error::UnknownIntensity(other.to_string())),
        })
    }
}

/// Evaluates a reference intensity by name on `[0, T*]`.
pub fn paper_intensity(name: &str, t: f64, t_star: f64) -> Result<f64> {
    if !(0.0..=t_star).contains(&t) {
        return Err(Error::InvalidParameter(format!(
            "t = {t} lies outside [0, {t_star}]"
        )));
    }
    Ok(name.parse::<PaperIntensity>()?.eval(t, t_star))
}

/// True positions of the six reference sources, in table order.
pub const PAPER_POSITIONS: [[f64; 2]; 6] = [
    [200.0, 800.0],
    [200.0, 650.0],
    [800.0, 200.0],
    [400.0, 600.0],
    [800.0, 800.0],
    [500.0, 100.0],
];

/// Positions of the 2, 4, 5 and 6 point layouts.
pub fn paper_layout(points: usize) -> Result<Vec<[f64; 2]>> {
    let p = PAPER_POSITIONS;
    Ok(match points {
        2 => vec![p[0], p[1]],
        4 => vec![p[0], p[2], p[3], p[4]],
        5 => vec![p[0], p[2], p[3], p[4], p[5]],
        6 => vec![p[0], p[2], p[3], p[4], p[5], [900.0, 500.0]],
        other => {
            return Err(Error::InvalidParameter(format!(
                "reference layouts exist for 2, 4, 5 or 6 points, not {other}"
            )))
        }
    })
}

/// A ground-truth configuration and its discretization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScenarioFile", into = "ScenarioFile")]
pub struct Scenario {
    pub grid: Grid2D,
    pub mesh: TimeMesh,
    pub kappa: f64,
    pub truth: SourceSet,
    /// Gaussian noise level relative to the trace RMS.
    pub noise: f64,
    pub seed: u64,
}

/// On-disk scenario schema.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct ScenarioFile {
    domain: Grid2D,
    kappa: f64,
    times: TimeMesh,
    sources: Vec<PointSource>,
    #[serde(default)]
    noise: f64,
    #[serde(default)]
    seed: u64,
}

impl TryFrom<ScenarioFile> for Scenario {
    type Error = Error;

    fn try_from(f: ScenarioFile) -> Result<Self> {
        f.domain.validate()?;
        f.times.validate()?;
        let s = Scenario {
            grid: f.domain,
            mesh: f.times,
            kappa: f.kappa,
            truth: SourceSet {
                t_star: f.times.t_star,
                sources: f.sources,
            },
            noise: f.noise,
            seed: f.seed,
        };
        s.validate()?;
        Ok(s)
    }
}

impl From<Scenario> for ScenarioFile {
    fn from(s: Scenario) -> Self {
        ScenarioFile {
            domain: s.grid,
            kappa: s.kappa,
            times: s.mesh,
            sources: s.truth.sources,
            noise: s.noise,
            seed: s.seed,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "diffusivity must be positive, got {}",
                self.kappa
            )));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::InvalidParameter("noise level must be >= 0".into()));
        }
        if (self.truth.t_star - self.mesh.t_star).abs() > 1e-9 * self.mesh.t_star {
            return Err(Error::InvalidParameter("source T* differs from mesh T*".into()));
        }
        self.truth.validate(&self.grid)
    }
}

/// Reference grid and time mesh at the default resolution.
pub fn paper_discretization() -> (Grid2D, TimeMesh) {
    (
        Grid2D {
            lx: PAPER_SIDE,
            ly: PAPER_SIDE,
            nx: DEFAULT_NODES,
            ny: DEFAULT_NODES,
        },
        TimeMesh {
            t_star: PAPER_T_STAR,
            t_final: PAPER_T_FINAL,
            nt_minus: DEFAULT_NT_MINUS,
            nt_plus: DEFAULT_NT_PLUS,
        },
    )
}

/// The 2, 4, 5 or 6 point reference case; intensities `g1, g2, ...` are
/// assigned in layout order.
pub fn build_paper_case(points: usize) -> Result<Scenario> {
    let (grid, mesh) = paper_discretization();
    build_paper_case_on(points, grid, mesh)
}

pub fn build_paper_case_on(points: usize, grid: Grid2D, mesh: TimeMesh) -> Result<Scenario> {
    let sources = paper_layout(points)?
        .into_iter()
        .zip(PaperIntensity::SOURCES)
        .map(|(position, name)| PointSource {
            position,
            intensity: Intensity::Named(name),
        })
        .collect();
    let s = Scenario {
        grid,
        mesh,
        kappa: PAPER_KAPPA,
        truth: SourceSet {
            t_star: mesh.t_star,
            sources,
        },
        noise: 0.0,
        seed: 0,
    };
    s.validate()?;
    Ok(s)
}

/// Simulates the boundary trace of the scenario, optionally adding
/// seeded Gaussian noise with standard deviation `noise * RMS(φ)`.
pub fn generate_measurement(scenario: &Scenario) -> Result<BoundaryTrace> {
    scenario.validate()?;
    let source = scenario.truth.discretize(&scenario.grid, &scenario.mesh)?;
    let mut trace = solve_forward(&scenario.grid, &scenario.mesh, scenario.kappa, &source)?.trace;
    if scenario.noise > 0.0 {
        add_noise(&mut trace, scenario.noise, scenario.seed)?;
    }
    Ok(trace)
}

fn add_noise(trace: &mut BoundaryTrace, level: f64, seed: u64) -> Result<()> {
    let sigma = level * trace.rms();
    if sigma == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in trace.values_mut() {
        *v += normal.sample(&mut rng);
    }
    // Corners are stored twice; keep the copies on the south/north edges.
    let g = *trace.grid();
    let (last_x, last_y) = (g.nx - 1, g.ny - 1);
    for n in 0..trace.n_times() {
        let pairs = [
            ((Edge::South, 0), (Edge::West, 0)),
            ((Edge::South, last_x), (Edge::East, 0)),
            ((Edge::North, 0), (Edge::West, last_y)),
            ((Edge::North, last_x), (Edge::East, last_y)),
        ];
        for ((ea, sa), (eb, sb)) in pairs {
            let v = trace.get(ea, sa, n);
            trace.set(eb, sb, n, v);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g4_at_zero_is_five() {
        let q0 = 0.5 * (1.0 - (-5.76f64).tanh());
        assert!((q0 - 0.99999).abs() < 1e-5);
        let g = paper_intensity("g4", 0.0, PAPER_T_STAR).unwrap();
        assert!((g - 5.0 * q0).abs() < 1e-15);
        assert!((g - 5.0).abs() < 1e-4);
    }

    #[test]
    fn g3_vanishes_at_t_star() {
        assert_eq!(paper_intensity("g3", PAPER_T_STAR, PAPER_T_STAR).unwrap(), 0.0);
    }

    #[test]
    fn g2_minus_five_q_is_modulated_sine() {
        for i in 0..50 {
            let t = PAPER_T_STAR * i as f64 / 49.0;
            let q = paper_intensity("q", t, PAPER_T_STAR).unwrap();
            let g2 = paper_intensity("g2", t, PAPER_T_STAR).unwrap();
            let expect = q * (4.0 * PI * t / PAPER_T_STAR).sin();
            assert!((g2 - 5.0 * q - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn g5_equals_g6() {
        for t in [0.0, 5e4, 1.3e5] {
            assert_eq!(
                PaperIntensity::G5.eval(t, PAPER_T_STAR),
                PaperIntensity::G6.eval(t, PAPER_T_STAR)
            );
        }
    }

    #[test]
    fn unknown_name_is_rejected() {
        assert!(matches!(
            paper_intensity("g7", 0.0, PAPER_T_STAR),
            Err(Error::UnknownIntensity(_))
        ));
    }

    #[test]
    fn roll_off_at_t_star_matches_logistic_form() {
        // ½(1 - tanh x) = 1 / (1 + e^{2x}) with x = 0.1 T* / 21600 = 0.64
        let q = PaperIntensity::Q.eval(PAPER_T_STAR, PAPER_T_STAR);
        assert!((q - 1.0 / (1.0 + 1.28f64.exp())).abs() < 1e-15);
        assert!((q - 0.2176).abs() < 1e-4);
    }

    #[test]
    fn intensities_are_nonnegative() {
        for name in PaperIntensity::SOURCES {
            for i in 0..=1000 {
                let t = PAPER_T_STAR * i as f64 / 1000.0;
                assert!(name.eval(t, PAPER_T_STAR) >= 0.0);
            }
        }
    }

    #[test]
    fn layouts_match_reference_table() {
        let c2 = build_paper_case(2).unwrap();
        assert_eq!(c2.truth.positions(), vec![[200.0, 800.0], [200.0, 650.0]]);
        let c5 = build_paper_case(5).unwrap();
        assert_eq!(
            c5.truth.positions(),
            vec![[200.0, 800.0], [800.0, 200.0], [400.0, 600.0], [800.0, 800.0], [500.0, 100.0]]
        );
        let c6 = build_paper_case(6).unwrap();
        assert_eq!(c6.truth.m(), 6);
        assert_eq!(c6.truth.positions()[5], [900.0, 500.0]);
        assert_eq!(c6.kappa, 1.0);
        assert_eq!(c6.mesh.t_star, 138_240.0);
        assert_eq!(c6.mesh.t_final, 172_800.0);
        assert!(build_paper_case(3).is_err());
    }

    #[test]
    fn scenario_json_round_trip() {
        let s = build_paper_case(4).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains("\"domain\""));
        let back: Scenario = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }
}
