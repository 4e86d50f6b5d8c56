pub mod config;
pub mod error;
pub mod experiments;
pub mod linops;
pub mod noise;
pub mod report;
mod rng;
pub mod solvers;

pub use error::{Error, Result};
