pub mod baselines;
pub mod data;
pub mod error;
pub mod eval;
pub mod explain;
pub mod features;
pub mod model;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
