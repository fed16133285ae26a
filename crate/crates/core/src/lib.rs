//! Enriched recurrent-convolutional micro-expression recognition.
//!
//! The crate covers the whole numeric pipeline:
//!
//! * [`dataset`]: manifests, resizing, database merging and the synthetic micro-motion generator
//! * [`flow`]: duality-based TV-L1 optical flow and the `(p, q, m)` flow image
//! * [`strain`]: infinitesimal strain tensor and its magnitude image
//! * [`tim`]: fixed-length temporal interpolation
//! * [`nn`]: the small differentiable toolkit (conv, pool, dense, LSTM, ADAM, trainer)
//! * [`elrcn`]: the SE / TE network variants and sequence prediction
//! * [`eval`]: LOSO / CDE / HDE protocols and F1 / UAR / WAR metrics
//! * [`gradcam`]: class activation heatmaps and overlays

pub mod dataset;
pub mod error;
pub mod eval;
pub mod flow;
pub mod gradcam;
pub mod frame;
pub mod elrcn;
pub mod nn;
pub mod strain;
pub mod tim;

pub use error::{Error, Result};
pub use frame::Grayscale;
