//! Command-line front end for training and evaluating tool-presence
//! networks: configuration, subcommands and experiment plans.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiments;
pub mod predictions;
