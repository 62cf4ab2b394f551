//! Corpus-grounded verification of procedural step sequences.
//!
//! A generated plan is embedded step by step, aligned against a corpus of
//! time-stamped narrations in two stages, and turned into a reward that
//! credits only the progress a completion makes beyond its history. The
//! crate also serves those rewards in batch, simulates GRPO training against
//! them, and aggregates judged evaluation transcripts.

pub mod alignment;
pub mod corpus;
pub mod embedder;
pub mod error;
pub mod evalkit;
pub mod grpo;
pub mod matrix;
pub mod reward;
pub mod service;

pub use alignment::{
    grounding_score, mono_coverage, nw_align, score_pool, stage1_retrieve, AlignConfig, AlignmentOutcome, Grounding,
    Move, NwAlignment, StepSequence,
};
pub use corpus::{
    ingest_corpus, read_index, write_index, CorpusIndex, EmbeddingSource, IngestReport, Manifest, NarrationRecord,
    NarrationSegment, RecordSpan,
};
pub use embedder::{similarity_matrix, Embedder, HashFeatureEmbedder, SimMatrix};
pub use error::{Error, Result};
pub use matrix::{EmbeddingMatrix, MatrixView};
pub use reward::{
    compute_reward, concat_steps, gated_reward, group_advantages, AdvantageGroup, BaselinePool, RewardBreakdown,
    RewardConfig,
};
