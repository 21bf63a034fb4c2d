//! The `weldwatch` command line and HTTP service.

pub mod cli;
pub mod commands;
pub mod server;
