// SPDX-License-Identifier: MIT OR Apache-2.0

#![forbid(unsafe_code)]

pub mod commands;
pub mod config;
pub mod error;
pub mod series;

pub use error::{CliError, CliResult};
