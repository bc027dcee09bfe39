//! Numerical laboratory for the linear latent-value model of RLAIF.

pub mod ceiling;
pub mod error;
pub mod experiment;
pub mod gaussian_world;
pub mod improvement;
pub mod linear_model;
pub mod mc;
pub mod multiobjective;
pub mod nonlinear;
pub mod preference;
pub mod report;
pub mod spectrum;

pub use error::{Error, Result};
