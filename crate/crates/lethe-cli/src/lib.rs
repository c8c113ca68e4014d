//! Harness for the unlearning laboratory: experiment configs, checkpoint
//! files, report writers, and the run orchestrator behind the `lethe` CLI.

pub mod checkpoint;
pub mod config;
pub mod report;
pub mod runner;
