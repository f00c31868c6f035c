pub mod cli;
pub mod critical_temp;
pub mod error;
pub mod gap_equation;
pub mod potentials;
pub mod quadrature;
pub mod radial_ops;
pub mod scattering;
pub mod spectral;

pub use error::{Error, Result};
