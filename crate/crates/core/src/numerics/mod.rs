//! Shared numerical building blocks.

pub mod demod;
pub mod fit;
pub mod ode;
pub mod peaks;
pub mod spectral;
