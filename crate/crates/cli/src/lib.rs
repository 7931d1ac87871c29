//! Experiment harness: batch runs with persisted outputs, and the real-time
//! simulation service.

pub mod manifest;
pub mod protocol;
pub mod runs;
pub mod service;

pub use manifest::{read_manifest, ExperimentKind, RunDir, RunManifest};
