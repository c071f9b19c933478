//! From word alignments to a token mapping: word-pair counting,
//! thresholding, plus-one smoothing, per-token splitting and normalization.

mod counts;
mod mapping;
mod smoothing;
mod split;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wordizer::{TokenId, Vocab};

pub use counts::{count_word_pairs, count_word_pairs_interned, read_counts_tsv, write_counts_tsv, WordPairCounts};
pub use mapping::{merge_mappings, normalize, MappingBundle, Provenance, TokenMapping};
pub use smoothing::{add_smoothing, special_role, SmoothingReport};
pub use split::{split_to_tokens, TokenAlignmentCounts};

#[derive(Debug, Error)]
pub enum MapError {
    #[error("sentence {ordinal}: link ({src}, {tgt}) outside {src_len}x{tgt_len}")]
    LinkOutOfBounds {
        ordinal: usize,
        src: u32,
        tgt: u32,
        src_len: usize,
        tgt_len: usize,
    },
    #[error("{0} alignments for {1} sentence pairs")]
    AlignmentCount(usize, usize),
    #[error("word pair has a zero-token word")]
    EmptyWord,
    #[error("token id {id} out of range for the {side} vocabulary of size {size}")]
    InvalidToken { side: &'static str, id: TokenId, size: usize },
    #[error("mapping targets vocabulary {found}, expected {expected}")]
    TargetVocabMismatch { expected: String, found: String },
    #[error("mapping built for a different {side} vocabulary")]
    VocabHashMismatch { side: &'static str },
    #[error("invalid mapping: {0}")]
    InvalidMapping(String),
    #[error("counts line {line}: {message}")]
    CountsFormat { line: usize, message: String },
    #[error("mapping JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Count for one entry, keeping plus-one smoothing apart from corpus
/// evidence so that thresholding can exempt it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PairCount {
    pub evidence: f64,
    pub smoothing: f64,
}

impl PairCount {
    pub fn total(&self) -> f64 {
        self.evidence + self.smoothing
    }

    pub fn is_smoothed(&self) -> bool {
        self.smoothing > 0.0
    }

    /// Scales by `num / den`, multiplying first so integer shares of
    /// integer counts come out exact.
    fn scaled(&self, num: usize, den: usize) -> PairCount {
        let (num, den) = (num as f64, den as f64);
        PairCount {
            evidence: self.evidence * num / den,
            smoothing: self.smoothing * num / den,
        }
    }

    fn add(&mut self, other: PairCount) {
        self.evidence += other.evidence;
        self.smoothing += other.smoothing;
    }
}

/// Removing entries whose count is below a minimum.
pub trait Threshold: Sized {
    /// Drops entries with total count `< min_count`. Counts equal to
    /// `min_count` survive. With `exempt_smoothed`, entries that received
    /// smoothing are kept regardless.
    fn apply_threshold(self, min_count: f64, exempt_smoothed: bool) -> Self;
}

fn survives(count: &PairCount, min_count: f64, exempt_smoothed: bool) -> bool {
    count.total() >= min_count || (exempt_smoothed && count.is_smoothed())
}

/// How a word pair's count is distributed over its token pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitStrategy {
    /// Every target token matched with every source token, `C/S` each.
    AllToAll,
    /// Tokens matched by overlap of their relative positions.
    InOrder,
    /// Mean of the two.
    #[default]
    Average,
}

/// Whether the minimum count applies to word pairs or to split token pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdStage {
    #[default]
    Word,
    Token,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapperConfig {
    pub min_count: f64,
    pub threshold_stage: ThresholdStage,
    pub exempt_smoothed: bool,
    pub strategy: SplitStrategy,
    pub smooth_identical: bool,
    pub smooth_specials: bool,
    /// Extra `(source surface, target surface)` pairs to smooth.
    pub extra_pairs: Vec<(String, String)>,
}

impl Default for MapperConfig {
    fn default() -> Self {
        Self {
            min_count: 10.0,
            threshold_stage: ThresholdStage::Word,
            exempt_smoothed: true,
            strategy: SplitStrategy::Average,
            smooth_identical: true,
            smooth_specials: true,
            extra_pairs: Vec::new(),
        }
    }
}

impl MapperConfig {
    pub fn provenance(&self) -> Provenance {
        Provenance {
            strategy: self.strategy,
            min_count: self.min_count,
            threshold_stage: self.threshold_stage,
            exempt_smoothed: self.exempt_smoothed,
        }
    }
}

/// Runs smoothing, thresholding, splitting and normalization on raw word
/// pair counts.
pub fn build_mapping(
    counts: WordPairCounts,
    source: &Vocab,
    target: &Vocab,
    config: &MapperConfig,
) -> Result<(TokenMapping, SmoothingReport), MapError> {
    let mut extra = Vec::with_capacity(config.extra_pairs.len());
    for (s, t) in &config.extra_pairs {
        let sid = source.id(s).ok_or_else(|| MapError::InvalidMapping(format!("unknown source token {s:?}")))?;
        let tid = target.id(t).ok_or_else(|| MapError::InvalidMapping(format!("unknown target token {t:?}")))?;
        extra.push((sid, tid));
    }
    let (counts, report) = add_smoothing(counts, source, target, &extra, config.smooth_identical, config.smooth_specials)?;
    let counts = match config.threshold_stage {
        ThresholdStage::Word => counts.apply_threshold(config.min_count, config.exempt_smoothed),
        ThresholdStage::Token => counts,
    };
    let mut tokens = split_to_tokens(&counts, config.strategy)?;
    if config.threshold_stage == ThresholdStage::Token {
        tokens = tokens.apply_threshold(config.min_count, config.exempt_smoothed);
    }
    let mapping = normalize(&tokens, source, target, config.provenance())?;
    Ok((mapping, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_is_strict_below() {
        let c = |e: f64, s: f64| PairCount { evidence: e, smoothing: s };
        assert!(survives(&c(10.0, 0.0), 10.0, true));
        assert!(!survives(&c(10.0 - 1e-9, 0.0), 10.0, true));
        assert!(survives(&c(0.0, 1.0), 10.0, true));
        assert!(!survives(&c(0.0, 1.0), 10.0, false));
        assert!(survives(&c(0.0, 0.0), 0.0, false));
    }

    #[test]
    fn config_json_defaults() {
        let cfg: MapperConfig = serde_json::from_str(r#"{"strategy": "in_order"}"#).unwrap();
        assert_eq!(cfg.strategy, SplitStrategy::InOrder);
        assert_eq!(cfg.min_count, 10.0);
        assert!(cfg.exempt_smoothed);
    }
}
