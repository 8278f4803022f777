//! Pipeline orchestration for the `neurogen` command.

pub mod cli;
pub mod config;
pub mod metrics;
pub mod report;

pub use cli::{main_with_args, run, Cli};
