//! Inference for one coefficient of a high-dimensional linear model whose
//! coefficient vector need not be sparse, with lower-bound oracles and a
//! Monte Carlo harness.

pub mod datagen;
pub mod error;
pub mod harness;
pub mod inference;
pub mod linalg;
pub mod lowerbound;
pub mod model;
pub mod par;
pub mod rng;
pub mod solvers;

mod serde_na;

pub use error::{Error, Result};
