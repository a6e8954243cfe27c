//! Command-line pipeline around the prefix adder toolkit: corpus
//! generation, model training, sampling, and database reporting. The
//! library form exists so integration tests can reach the configuration
//! and evaluation logic; the `prefixforge` binary is a thin wrapper.

pub mod config;
pub mod eval;
pub mod run;

pub use config::{Precision, RunConfig};
pub use run::{execute, Cli};
