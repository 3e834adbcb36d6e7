pub mod dtrm;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod mesh;
pub mod sampling;
pub mod spectral;
pub mod surrogate;
pub mod tuner;

pub use error::{CoreError, Result};
