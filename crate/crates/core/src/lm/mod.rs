//! Language-model substrate: vocabularies, smoothed n-gram models, per-step
//! distributions, token sampling and the hidden-feature extractor consumed by
//! the judge verifier.

mod dist;
mod features;
mod ngram;
pub(crate) mod sampling;
mod vocab;

pub use dist::Distribution;
pub use features::{FeatureExtractor, FeatureVector, FEATURE_DIM, PROJECTION_SEED};
pub use ngram::{ModelFile, NGramModel, MODEL_FORMAT_VERSION};
pub use sampling::sample_token;
pub use vocab::Vocab;

/// Token identifiers are dense indices `0..V`.
pub type TokenId = usize;
