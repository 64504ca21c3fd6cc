//! File formats, parallel stage drivers and the `cpi` command line built on
//! [`cpi_core`].

pub use cpi_core as core;

pub mod array;
pub mod checksum;
pub mod cli;
pub mod config;
pub mod cpif;
pub mod error;
pub mod manifest;
pub mod pgm;
pub mod pipeline;
pub mod study;

pub use error::{CliError, FormatError, Result};
