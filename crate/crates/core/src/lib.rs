//! Trans-tokenization toolkit: builds a probabilistic token mapping between
//! two tokenizers from a word-aligned parallel corpus, and uses it to
//! re-initialize embedding tables and language-modeling heads.
//!
//! The pipeline runs corpus reading, word re-merging, statistical word
//! alignment, count splitting and normalization, then embedding remapping.
//! See [`pipeline::run_pipeline`] for the end-to-end driver.

pub mod aligner;
pub mod api;
pub mod corpus;
pub mod hydra;
pub mod mapper;
pub mod pipeline;
pub mod remapper;
pub mod tensors;
pub mod wordizer;

mod util;

pub use util::write_atomic;
