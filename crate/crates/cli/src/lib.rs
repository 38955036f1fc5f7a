//! Experiment harness: JSON configuration, the `run`, `verify`, `oracle`
//! and `sweep` commands, and deterministic CSV and SVG output.

// `!(x > 0.0)` rejects NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod svg;

pub use config::Config;
pub use error::{CliError, CliResult, EXIT_CONFIG, EXIT_FAILURE, EXIT_PASS};
