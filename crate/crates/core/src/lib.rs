pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod corpus;
pub mod error;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod parallel;

pub use error::{Error, Result};
