//! Sarcasm detection for Hindi-English code-mixed tweets.
//!
//! The crate is organised as a pipeline:
//!
//! * [`corpus`]: cleaning, tokenisation, vocabulary, encoding and splits
//! * [`embed`]: skip-gram negative-sampling embeddings, plain and subword
//! * [`nncore`]: a small reverse-mode tensor engine with the layers,
//!   loss and optimizer the classifiers need
//! * [`models`]: series/parallel CNN, LSTM, BiLSTM and attention BiLSTM
//! * [`trainer`]: training loop, evaluation, checkpoints and result grids
//! * [`synthetic`]: generated corpora for demos and tests

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod embed;
pub mod error;
pub mod models;
pub mod nncore;
pub mod synthetic;
pub mod trainer;

pub use corpus::{EncodedSequence, TweetRecord, Vocabulary};
pub use embed::{CorpusVariant, EmbedConfig, EmbedVariant, EmbeddingMatrix};
pub use error::{Error, Result};
pub use models::{Architecture, BuiltModel, ModelSpec};
pub use trainer::{Checkpoint, EvalReport, History, TrainConfig};
