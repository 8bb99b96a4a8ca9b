pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod field;
pub mod image;
pub mod metrics;
pub mod oracle;
pub mod params;
pub mod render;
pub mod se3;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
