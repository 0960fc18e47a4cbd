//! Configuration, orchestration and report emission behind the `qls` binary.

pub mod config;
pub mod emit;
pub mod run;
