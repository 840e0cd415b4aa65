//! Pseudo-replay class-incremental learning for streaming sensor anomaly
//! detection.
//!
//! Per-class SMOTE generators stand in for stored raw data of earlier
//! classes, so a fresh classifier can be trained whenever a new anomaly
//! category shows up. Elastic weight consolidation, fine-tuning and a
//! joint-training baseline are provided as comparison strategies.

pub mod classifier;
pub mod cli;
pub mod continual;
pub mod data;
pub mod error;
pub mod eval;
pub mod generator;
pub mod report;
pub mod seed;

pub use error::{Error, Result};
