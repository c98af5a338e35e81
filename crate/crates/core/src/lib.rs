//! Simulation and reconstruction toolkit for balloon-catheter electrical
//! impedance tomography.

pub mod error;
pub mod experiments;
pub mod fem;
pub mod geometry;
pub mod inverse;
pub mod noise;
pub mod protocol;

pub use error::{Error, Result};
