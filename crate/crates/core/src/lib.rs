pub mod analysis;
pub mod baselines;
pub mod error;
pub mod filters;
pub mod observer;
pub mod qdob;
pub mod sim;

pub use error::{Error, Result};
