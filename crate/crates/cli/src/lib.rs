//! Batch pipeline commands and the validation service built on
//! `kilnwatch-core`.

pub mod cli;
pub mod config;
pub mod inputs;
pub mod reports;
pub mod server;
pub mod tiles;
