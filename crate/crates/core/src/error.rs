use thiserror::Error;

/// Errors raised by the reconstruction toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid time mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("source position ({x}, {y}) is not strictly inside the domain")]
    SourceOutsideDomain { x: f64, y: f64 },

    #[error("non-finite value after step {step} (t = {t} s); check the time step, spacing or source")]
    NonFinite { step: usize, t: f64 },

    #[error("time mesh mismatch: {0}")]
    MeshMismatch(String),

    #[error("|a| = {norm} is below sqrt(|k| pi) = {min}; no admissible imaginary part exists")]
    VectorBInadmissible { norm: f64, min: f64 },

    #[error("scale r_k = {r} is too small for mode {k}; the minimal admissible scale is {min}")]
    ScaleTooSmall { k: usize, r: f64, min: f64 },

    #[error("exponent real part {re} exceeds the overflow guard")]
    Overflow { re: f64 },

    #[error("matrix entry ({row}, {col}) overflows: exponent real part {re}")]
    EntryOverflow { row: usize, col: usize, re: f64 },

    #[error("control cache fingerprint mismatch: cache {cache}, data {data}")]
    FingerprintMismatch { cache: String, data: String },

    #[error("cache precompute failed at eta = {eta:?}: {source}")]
    CacheSolve {
        eta: [usize; 3],
        #[source]
        source: Box<Error>,
    },

    #[error("unknown intensity function '{0}'")]
    UnknownIntensity(String),

    #[error("degenerate intensity basis: sources {0} and {1} share a position")]
    DegenerateBasis(usize, usize),

    #[error("stability bound is vacuous: (m - 1) exp(-r delta^2 / 2) = {0} >= 1")]
    VacuousBound(f64),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
