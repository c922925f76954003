pub mod error;
pub mod numerics;
pub mod open_system;
pub mod qubit;
pub mod resonator;
pub mod quantum;
pub mod quasiclassical;
pub mod spectra;

pub use error::{Error, Result};
