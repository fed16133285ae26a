//! The recurrent convolutional classifier.
//!
//! Each video becomes a sequence of enriched frames (flow, strain, grayscale).
//! Convolutional encoders map every frame to a feature vector; an LSTM runs
//! over the sequence and one fully connected layer scores the final output.
//! The SE variant stacks all five planes into one encoder; TE feeds flow,
//! replicated strain and replicated grayscale to three encoders and
//! concatenates their features.

mod config;
mod encoder;
mod enrich;
mod network;

pub use config::{ElrcnConfig, EncoderSpec, FeatureTap, Preset, ShapeLedger, Variant};
pub use encoder::{Encoder, EncoderCache};
pub use enrich::{
    build_enriched_sequence, build_enriched_sequence_with, prepare_sample, prepare_sample_with, EnrichedFrame,
    PipelineConfig, PreparedSample,
};
pub use network::{ElrcnModel, SequenceInput};
