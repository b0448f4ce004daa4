//! Bag-of-n-grams training objectives for non-autoregressive translation.
//!
//! The crate computes expected n-gram counts of a position-wise
//! distribution table, the BoN L1 loss and its gradient, trains a small
//! non-autoregressive model with those losses, and evaluates checkpoints.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod loss;
pub mod matrix;
pub mod model;
pub mod ngram;
pub mod probmodel;

pub use corpus::{ParallelPair, TaskKind, TokenId, TokenSequence, Vocabulary, PAD_ID, UNK_ID};
pub use error::{Error, Result};
pub use loss::{bon_l1, bon_loss, cross_entropy, joint_loss, JointConfig, LossResult, LossSpec};
pub use matrix::Matrix;
pub use model::{Checkpoint, ModelDims, Schedule, TrainConfig};
pub use ngram::{count_ngrams, Ngram, NgramBag, MAX_ORDER};
pub use probmodel::{
    expected_bag, expected_counts, expected_ngram_count, oracle_expected_count, ProbTable,
};
