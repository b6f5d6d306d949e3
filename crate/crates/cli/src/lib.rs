//! Library side of the `coopfuse` command-line tool, shared with its tests.

pub mod commands;
pub mod config;
