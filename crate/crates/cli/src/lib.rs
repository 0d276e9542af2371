//! Command-line front end and file formats for the `coded-backoff-core`
//! simulator.

pub mod app;
pub mod cli;
pub mod config;
pub mod output;
pub mod sweep;
pub mod trace;
