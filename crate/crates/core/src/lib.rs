//! Sequence labeling and redaction for noisy, lowercase, digit-free
//! call-center transcripts: a BiLSTM-CRF tagger over trainable static
//! subword embeddings and contextual character-LM embeddings, plus the
//! data pipeline, evaluation harness, synthetic corpus generator and
//! placeholder redactor around it.

pub mod cli;
pub mod contextual;
pub mod error;
pub mod experiments;
pub mod lstm;
pub mod manifest;
pub mod math;
pub mod pipeline;
pub mod provider;
pub mod redaction;
pub mod schema;
pub mod static_embeddings;
pub mod synthgen;
pub mod tagger;

pub use error::{Error, Result};
