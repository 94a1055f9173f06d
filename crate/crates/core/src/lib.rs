//! Multi-timescale averaging engine for driven spin-boson systems.

pub mod error;
pub mod fidelity;
pub mod fourier;
pub mod hilbert;
pub mod msgate;
pub mod propagate;
pub mod qat;

pub use error::{Error, Result};
