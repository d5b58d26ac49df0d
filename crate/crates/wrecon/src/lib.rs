//! File formats, dataset tooling and the `wrecon` command-line driver built
//! on [`wrecon_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod fsutil;
pub mod imgf;
pub mod manifest;
pub mod maskfile;
pub mod png;
pub mod report;

pub use error::FormatError;
