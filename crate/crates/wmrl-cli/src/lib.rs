//! Command-line front end for the offline-to-online training pipeline:
//! dataset generation, world-model training, the two-phase experiment
//! runner, and the diagnostics around them. All numerical work lives in
//! `wmrl-core`; this crate owns argument handling, file formats, and exit
//! codes.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
