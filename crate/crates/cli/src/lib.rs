//! Batch front end: configuration parsing, solve and verify drivers.

pub mod config;
pub mod run;
pub mod suites;
