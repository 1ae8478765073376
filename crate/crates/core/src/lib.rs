pub mod copula;
pub mod dataset;
pub mod discrepancy;
pub mod dist;
pub mod error;
pub mod estimators;
pub mod evaluation;
mod par;
pub mod rng;
pub mod simulators;
pub mod smc;
pub mod tree;

pub use error::{Error, Result};
