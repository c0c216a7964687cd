//! Learned trajectory scoring for highway-style motion planning.

pub mod error;
pub mod features;
pub mod geometry;
pub mod io;
pub mod planners;
pub mod prediction;
pub mod safety;
pub mod scenario;
pub mod scorer;
pub mod sim;
pub mod training;
pub mod trajgen;

pub use error::{Error, Result};
