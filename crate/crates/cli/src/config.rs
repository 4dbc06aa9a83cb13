use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use srctrace::inversion::{InversionConfig, Method};
use srctrace::scenario::{build_paper_case, Scenario};
use std::path::{Path, PathBuf};

/// Settings shared by all subcommands. Values from `--config` are
/// overridden by flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Option<PathBuf>,
    /// Reference layout with 2, 4, 5 or 6 points, used when no scenario file is given.
    pub case: Option<usize>,
    pub trace: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub w: [usize; 3],
    pub max_sources: usize,
    pub restarts: usize,
    pub modes: usize,
    pub approx_order: usize,
    pub method: Method,
    pub output: PathBuf,
    pub seed: u64,
    /// Overrides the scenario's noise level.
    pub noise: Option<f64>,
    pub samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let inv = InversionConfig::default();
        RunConfig {
            scenario: None,
            case: None,
            trace: None,
            cache: None,
            w: srctrace::control::DEFAULT_BOX,
            max_sources: inv.max_sources,
            restarts: inv.restarts,
            modes: inv.modes,
            approx_order: inv.approx_order,
            method: inv.method,
            output: PathBuf::from("out"),
            seed: inv.seed,
            noise: None,
            samples: inv.samples,
        }
    }
}

#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Scenario JSON file.
    #[arg(long, global = true)]
    pub scenario: Option<PathBuf>,
    /// Reference case (2, 4, 5 or 6 points).
    #[arg(long, global = true)]
    pub case: Option<usize>,
    /// Boundary trace file.
    #[arg(long, global = true)]
    pub trace: Option<PathBuf>,
    /// Control cache file.
    #[arg(long, global = true)]
    pub cache: Option<PathBuf>,
    /// Control basis box, e.g. `12,12,5`.
    #[arg(long, global = true, value_parser = parse_box)]
    pub w: Option<[usize; 3]>,
    #[arg(long = "max-sources", global = true)]
    pub max_sources: Option<usize>,
    #[arg(long, global = true)]
    pub restarts: Option<usize>,
    /// Number of Fourier modes `K`.
    #[arg(long, global = true)]
    pub modes: Option<usize>,
    /// Approximation order `L`.
    #[arg(long = "approx-order", global = true)]
    pub approx_order: Option<usize>,
    /// ifourier, approx or both.
    #[arg(long, global = true)]
    pub method: Option<Method>,
    /// Output file or directory.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub noise: Option<f64>,
    #[arg(long, global = true)]
    pub samples: Option<usize>,
}

fn parse_box(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|_| format!("expected three comma-separated integers, got {s:?}"))
}

impl RunConfig {
    pub fn resolve(o: &Overrides) -> Result<Self> {
        let mut c = match &o.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = &o.$f { c.$f = v.clone().into(); } )* };
        }
        set!(scenario, case, trace, cache, noise);
        set!(w, max_sources, restarts, modes, approx_order, method, output, seed, samples);
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.w.contains(&0) {
            bail!("every entry of the basis box W must be at least 1");
        }
        self.inversion().validate()?;
        if let Some(n) = self.noise {
            if !(n >= 0.0) {
                bail!("noise level must be non-negative");
            }
        }
        if let Some(p) = self.scenario.as_ref().filter(|p| !p.exists()) {
            bail!("{} does not exist", p.display());
        }
        Ok(())
    }

    pub fn inversion(&self) -> InversionConfig {
        InversionConfig {
            max_sources: self.max_sources,
            restarts: self.restarts,
            modes: self.modes,
            approx_order: self.approx_order,
            method: self.method,
            seed: self.seed,
            samples: self.samples,
        }
    }

    /// Scenario from file or reference case, with the noise override applied.
    pub fn load_scenario(&self) -> Result<Option<Scenario>> {
        let mut s = match (&self.scenario, self.case) {
            (Some(p), _) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading scenario {}", p.display()))?;
                serde_json::from_str::<Scenario>(&text).with_context(|| format!("parsing scenario {}", p.display()))?
            }
            (None, Some(k)) => build_paper_case(k)?,
            (None, None) => return Ok(None),
        };
        if let Some(n) = self.noise {
            s.noise = n;
        }
        Ok(Some(s))
    }

    pub fn require_scenario(&self) -> Result<Scenario> {
        self.load_scenario()?
            .context("no scenario given; pass --scenario FILE or --case N")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}
