//! Two-qubit state tomography from single-photon fringes in a
//! path-identity interferometer.

pub mod error;
pub mod fringes;
pub mod graph;
pub mod interferometer;
pub mod io;
pub mod oracle;
pub mod qstate;
pub mod reconstruct;

pub use error::{Error, Result};
pub use interferometer::{Configuration, ImperfectionModel, Polarization};
pub use qstate::{DensityMatrix, Emission, StateParams};
