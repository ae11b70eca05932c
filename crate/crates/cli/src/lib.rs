//! Pipeline driver behind the `brainalign` command: stage orchestration,
//! artifact bookkeeping and synthetic fixtures.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod fixture;
pub mod pipeline;
pub mod validate;

pub use config::{LoadedConfig, RunConfig};
pub use error::{CliError, CliResult};
pub use pipeline::{run, Stage, StageOutcome, Status};
