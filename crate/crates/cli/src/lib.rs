//! Library surface of the `saenad` binary: run configuration, the five
//! pipeline commands, and the synthetic data generator. Tests drive the same
//! functions the binary dispatches to.

pub mod commands;
pub mod config;
pub mod error;
pub mod synth;

pub use commands::{cmd_eval, cmd_gradcheck, cmd_preprocess, cmd_synth, cmd_train};
pub use config::RunConfig;
pub use error::{CliError, CliResult};
pub use synth::SyntheticSpec;
