//! Library surface of the command-line tool, split from the binary so
//! integration tests can drive the commands in-process.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_diff, cmd_inspect, cmd_sync, cmd_watch, EXIT_DIFFERENT, EXIT_FAILURE, EXIT_OK, EXIT_USAGE,
};
pub use config::{parse_config, ConfigError};
