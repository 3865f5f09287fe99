//! Operator surface for the tac engine: run configuration, the end-to-end
//! pipeline, sweeps and the `tac` command line.

pub mod args;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod sweep;
pub mod synth;

pub use config::{Mode, RunConfig};
pub use error::{CliError, CliResult};
pub use pipeline::{run, RunOutput};
