//! Polarimetric rendering and inverse estimation.
//!
//! The crate renders Stokes images of analytic signed-distance scenes under a
//! polarimetric BRDF and recovers per-point normals, materials and a single
//! unknown polarizer orientation from one polarized image per view.

pub mod cli;
pub mod error;
pub mod fresnel;
pub mod inverse;
pub mod math;
pub mod metrics;
pub mod pbrdf;
pub mod polcore;
pub mod render;
pub mod scene;

pub use error::{Error, Result};
pub use polcore::{MuellerMatrix, PolarizationInfo, StokesVector};
