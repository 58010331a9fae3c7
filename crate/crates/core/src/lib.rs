//! Numerical laboratory for the kinetic Fokker-Planck equation with
//! confinement potential Phi = <v>^gamma/gamma + Phi_0.

pub mod cutoff;
pub mod error;
pub mod evolution;
pub mod grid;
pub mod linalg;
pub mod spectral;
pub mod velocity_ops;

pub use error::{Error, Result};
