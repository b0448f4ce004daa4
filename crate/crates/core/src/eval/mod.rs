//! Evaluation: BLEU, Pearson correlation and checkpoint analyses.

pub mod analysis;
pub mod bleu;
pub mod pearson;

pub use analysis::{
    corpus_bleu, correlation_study, correlation_study_with, decode_corpus, length_bucket_bleu,
    removed_token_report, split_indices, split_short_long, CorrelationReport, Decoded,
    LengthBucket, Pooling, RemovalRow, SubsetPoint, DEFAULT_LOSSES,
};
pub use bleu::{bleu, smoothed_bleu, BleuScore, BleuStats, BLEU_ORDER};
pub use pearson::pearson;
