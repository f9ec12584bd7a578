//! Excitation trajectory design and dynamic parameter identification for
//! serial revolute manipulators.

pub mod base_params;
pub mod collision;
pub mod dataset;
pub mod dynamics;
pub mod error;
pub mod excitation;
pub mod filter;
pub mod fourier;
pub mod identify;
pub mod linalg;
pub mod pipeline;
pub mod sim;
pub mod urdf;

pub use error::{Error, Result};
