//! Command-line front end: CSV ingestion, JSON configuration, dispatch to
//! the estimators and plain-text artifacts.

pub mod config;
pub mod error;
pub mod ingest;
pub mod output;
pub mod run;

pub use config::{Command, Flags, Method, RunConfig};
pub use error::CliError;
pub use run::{run, Outcome};
