//! Command-line front end: CSV ingestion, test configuration, JSON-lines
//! reports and simulation tables.

pub mod args;
pub mod error;
pub mod ingest;
pub mod run;

pub use args::{Cli, Command};
pub use error::{CliError, CliResult};
pub use ingest::{ingest_csv, write_csv, Schema};
pub use run::{execute, run, ReportDocument, RunResult};
