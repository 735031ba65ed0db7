//! Command-line harness: configuration, orchestration, and report
//! emission for the compression-defense experiments.

pub mod config;
pub mod plot;
pub mod report;
pub mod runner;
