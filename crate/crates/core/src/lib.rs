//! Speculative decoding with a self-supervised judge verifier, built on
//! exactly computable n-gram language models.
//!
//! - [`lm`]: vocabularies, smoothed n-gram models, features, sampling
//! - [`specdec`]: drafting and the verification policies
//! - [`semlabel`]: mismatch mining, semantic preservation scores, labeling
//! - [`judge`]: logistic-regression verifier and threshold calibration
//! - [`info`]: conditional-entropy checks by exact enumeration
//! - [`corpus`]: the synthetic reference chain and text tokenization

pub mod corpus;
pub mod error;
pub mod info;
pub mod judge;
pub mod lm;
pub mod semlabel;
pub mod specdec;

pub use error::{Error, Result};
