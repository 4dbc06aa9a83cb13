//! Reconstruction of positions and intensities from `R` values.

pub mod approx;
pub mod fourier;
pub mod locate;
pub mod metrics;
pub mod pipeline;
pub mod spectral;

pub use approx::{approximate_intensities, intensity_basis, ApproxResult};
pub use fourier::{assemble_mode_system, inverse_fourier_intensities, recover_fourier, FourierSolve, FourierTable, Frequency, ModeSystem};
pub use locate::{locate_sources, LocateOptions, Located, VarPro};
pub use metrics::{assign, position_error, ErrorMetrics};
pub use pipeline::{run_inversion, InversionConfig, InversionResult, Method};
pub use spectral::{gershgorin_balls, stability_constant, stability_report, Ball, StabilityReport};
