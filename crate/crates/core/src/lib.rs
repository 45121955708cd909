pub mod cli;
pub mod diffnet;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod roi;
pub mod protocol;
pub mod synthdata;

pub use error::{Error, Result};
