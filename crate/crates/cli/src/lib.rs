//! Command-line orchestration of the ELRCN pipeline: synthesis, cached
//! preprocessing, training, protocol evaluation, ablations and Grad-CAM export.

pub mod cache;
pub mod commands;
pub mod config;
pub mod pipeline;

pub use config::RunConfig;
