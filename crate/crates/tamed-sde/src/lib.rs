//! Experiment harness, file formats and command-line front end for
//! `tamed-sde-core`.

pub mod cli;
pub mod config;
pub mod ensemble_io;
pub mod error;
pub mod exec;
pub mod harness;
pub mod report;

pub use config::Config;
pub use error::{Error, Result};
pub use exec::Parallel;
