//! The diarization network: encoder, attractor decoder, Embedding Enhancer
//! and the dot-product posterior head.

mod config;
mod layers;
mod model;
mod types;

pub use config::{EncoderKind, ModelConfig};
pub use model::{AedEend, ParamBreakdown};
pub use types::{
    posteriors, AttractorSet, EnrollmentSet, FrameEmbeddings, PosteriorMatrix, ACTIVITY_ROWS,
    ROW_NON, ROW_OVL, ROW_SGL,
};
