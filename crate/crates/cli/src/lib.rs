//! Configuration files, CSV datasets, run archives, aggregate tables, SVG
//! plots and the experiment runner behind the `recourse-drift` command.

pub mod aggregate;
pub mod archive;
pub mod config;
pub mod dataset;
pub mod error;
pub mod plot;
pub mod runner;
pub mod theory_report;

pub use error::{CliError, Result};
