//! Feature-collapse laboratory.
//!
//! A synthetic classification task where words are grouped into concepts,
//! two small networks trained on it (`h` and its LayerNorm variant `h*`), the
//! closed-form collapse geometry those networks are predicted to reach, and
//! diagnostics that compare trained weights against the predictions.

pub mod data_model;
pub mod diagnostics;
pub mod error;
mod linalg;
pub mod network;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
