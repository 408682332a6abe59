//! Command-line front end: argument definitions, file formats and commands.

pub mod args;
pub mod commands;
pub mod error;
pub mod formats;
pub mod ingest;
pub mod profile;
