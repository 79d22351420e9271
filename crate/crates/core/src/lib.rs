pub mod classifiers;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod nn;
pub mod schedule;
pub mod train;

pub use error::{Error, Result};
