//! Predicate-argument structure analysis with multi-layer recurrent encoders
//! and cross-predicate interaction layers.

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod decoder;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod model;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
