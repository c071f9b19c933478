//! Word alignment: an EM-trained lexical translation model with a
//! log-linear diagonal prior, Viterbi decoding, symmetrization of the two
//! directions, and Pharaoh-format import/export.

mod diagonal;
mod model;
mod pharaoh;
mod symmetrize;

use std::collections::HashMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wordizer::{TokenId, WordSequence};

pub use diagonal::{expected_feature, feature, partition, partition_naive, DiagonalParams};
pub use model::{align_bidirectional, em_train, AlignerConfig, TrainedModel, TranslationTable, FLOOR_PROB};
pub use pharaoh::{export_pharaoh, format_pharaoh_line, import_alignments, parse_pharaoh_line, PharaohReader};
pub use symmetrize::{symmetrize, SymmetrizeMode};

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid aligner parameters: {0}")]
    InvalidParams(String),
    #[error("sentence {ordinal}: alignment dimensions differ ({a_src}x{a_tgt} vs {b_src}x{b_tgt})")]
    DimensionMismatch {
        ordinal: usize,
        a_src: usize,
        a_tgt: usize,
        b_src: usize,
        b_tgt: usize,
    },
    #[error("sentence {ordinal}: link ({src}, {tgt}) outside {src_len}x{tgt_len}")]
    LinkOutOfBounds {
        ordinal: usize,
        src: u32,
        tgt: u32,
        src_len: usize,
        tgt_len: usize,
    },
    #[error("alignment line {line}, column {column}: malformed pair {token:?}")]
    Parse {
        line: usize,
        column: usize,
        token: String,
    },
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Word links for one sentence pair.
///
/// Links are `(source, target)` with 1-based indices; index 0 is the null
/// word and never appears in a link.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SentenceAlignment {
    pub ordinal: usize,
    pub source_len: usize,
    pub target_len: usize,
    pub links: Vec<(u32, u32)>,
}

impl SentenceAlignment {
    pub fn new(ordinal: usize, source_len: usize, target_len: usize, mut links: Vec<(u32, u32)>) -> Self {
        links.sort_unstable();
        links.dedup();
        Self {
            ordinal,
            source_len,
            target_len,
            links,
        }
    }

    pub fn check_bounds(&self) -> Result<(), AlignError> {
        for &(s, t) in &self.links {
            if s == 0 || t == 0 || s as usize > self.source_len || t as usize > self.target_len {
                return Err(AlignError::LinkOutOfBounds {
                    ordinal: self.ordinal,
                    src: s,
                    tgt: t,
                    src_len: self.source_len,
                    tgt_len: self.target_len,
                });
            }
        }
        Ok(())
    }

    /// Same links with the roles of source and target exchanged.
    pub fn transposed(&self) -> Self {
        Self::new(
            self.ordinal,
            self.target_len,
            self.source_len,
            self.links.iter().map(|&(s, t)| (t, s)).collect(),
        )
    }
}

/// Interns words (token-id sequences) to dense ids.
#[derive(Debug, Clone, Default)]
pub struct WordInterner {
    words: Vec<Box<[TokenId]>>,
    index: HashMap<Box<[TokenId]>, u32>,
}

impl WordInterner {
    pub fn intern(&mut self, tokens: &[TokenId]) -> u32 {
        if let Some(&id) = self.index.get(tokens) {
            return id;
        }
        let id = self.words.len() as u32;
        let boxed: Box<[TokenId]> = tokens.into();
        self.words.push(boxed.clone());
        self.index.insert(boxed, id);
        id
    }

    pub fn get(&self, tokens: &[TokenId]) -> Option<u32> {
        self.index.get(tokens).copied()
    }

    pub fn word(&self, id: u32) -> &[TokenId] {
        &self.words[id as usize]
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// One sentence pair as interned word ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordIdPair {
    pub source: Box<[u32]>,
    pub target: Box<[u32]>,
}

/// A parallel corpus of word sequences, interned per side.
#[derive(Debug, Clone, Default)]
pub struct AlignmentCorpus {
    pub source_words: WordInterner,
    pub target_words: WordInterner,
    pub pairs: Vec<WordIdPair>,
}

impl AlignmentCorpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, source: &WordSequence, target: &WordSequence) {
        let source = source.words.iter().map(|w| self.source_words.intern(&w.tokens)).collect();
        let target = target.words.iter().map(|w| self.target_words.intern(&w.tokens)).collect();
        self.pairs.push(WordIdPair { source, target });
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// The corpus with source and target sides swapped.
    pub fn reversed(&self) -> AlignmentCorpus {
        AlignmentCorpus {
            source_words: self.target_words.clone(),
            target_words: self.source_words.clone(),
            pairs: self
                .pairs
                .iter()
                .map(|p| WordIdPair {
                    source: p.target.clone(),
                    target: p.source.clone(),
                })
                .collect(),
        }
    }

    /// Token decomposition of every word in sentence `k`, per side.
    pub fn sentence_words(&self, k: usize) -> (Vec<&[TokenId]>, Vec<&[TokenId]>) {
        let p = &self.pairs[k];
        (
            p.source.iter().map(|&w| self.source_words.word(w)).collect(),
            p.target.iter().map(|&w| self.target_words.word(w)).collect(),
        )
    }
}

impl<'a> FromIterator<(&'a WordSequence, &'a WordSequence)> for AlignmentCorpus {
    fn from_iter<I: IntoIterator<Item = (&'a WordSequence, &'a WordSequence)>>(iter: I) -> Self {
        let mut corpus = AlignmentCorpus::new();
        for (s, t) in iter {
            corpus.push(s, t);
        }
        corpus
    }
}

/// Which alignment direction(s) to run and how to combine them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignDirection {
    /// Each target word links to at most one source word.
    Forward,
    /// Each source word links to at most one target word.
    Reverse,
    Both(SymmetrizeMode),
}

impl Default for AlignDirection {
    fn default() -> Self {
        AlignDirection::Both(SymmetrizeMode::GrowDiagFinalAnd)
    }
}
