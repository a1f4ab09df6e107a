//! ReLU reduction toolkit for CNNs used in private inference.

pub mod cli;
pub mod criticality;
pub mod data;
pub mod engine;
pub mod error;
pub mod netir;
pub mod passes;
pub mod pipeline;
pub mod profile;

pub use error::{Error, Result};
