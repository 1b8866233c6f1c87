//! Synthetic scenarios, tracker runs, metrics, timing and file formats.

pub mod bench;
pub mod config;
pub mod metrics;
pub mod persist;
pub mod run;
pub mod scenario;
