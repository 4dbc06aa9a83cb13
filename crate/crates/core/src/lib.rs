//! Reconstruction of point sources of a 2D diffusion process from
//! boundary measurements, using dynamic complex geometrical optics test
//! functions and boundary controls.

pub mod cgo;
pub mod control;
pub mod error;
pub mod functional;
pub mod heat;
pub mod inversion;
pub mod lsqr;
pub mod quad;
pub mod scenario;
pub mod source;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
