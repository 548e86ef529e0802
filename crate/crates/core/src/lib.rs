pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod fixtures;
pub mod layers;
pub mod scoring;
mod seed;
pub mod trainer;

pub use error::{Error, Result};
