use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MapError, SplitStrategy, ThresholdStage, TokenAlignmentCounts};
use crate::wordizer::{TokenId, Vocab};

const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Settings that produced a mapping, stored alongside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub strategy: SplitStrategy,
    pub min_count: f64,
    pub threshold_stage: ThresholdStage,
    pub exempt_smoothed: bool,
}

/// For each target token, a distribution over source tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenMapping {
    pub source_vocab_hash: String,
    pub target_vocab_hash: String,
    pub source_vocab_size: usize,
    pub target_vocab_size: usize,
    /// Rows sorted by source id; weights positive and summing to one.
    pub rows: BTreeMap<TokenId, Vec<(TokenId, f64)>>,
    /// Target tokens without any surviving count.
    pub unmapped: BTreeSet<TokenId>,
    /// Target tokens whose row rests on smoothing alone.
    #[serde(default)]
    pub smoothed_only: BTreeSet<TokenId>,
    pub provenance: Provenance,
}

/// Divides each target token's counts by their sum.
pub fn normalize(
    counts: &TokenAlignmentCounts,
    source: &Vocab,
    target: &Vocab,
    provenance: Provenance,
) -> Result<TokenMapping, MapError> {
    let mut rows: BTreeMap<TokenId, Vec<(TokenId, f64)>> = BTreeMap::new();
    let mut evidence: BTreeMap<TokenId, f64> = BTreeMap::new();
    for (&(t, s), c) in &counts.counts {
        if t as usize >= target.len() {
            return Err(MapError::InvalidToken { side: "target", id: t, size: target.len() });
        }
        if s as usize >= source.len() {
            return Err(MapError::InvalidToken { side: "source", id: s, size: source.len() });
        }
        if c.total() > 0.0 {
            rows.entry(t).or_default().push((s, c.total()));
            *evidence.entry(t).or_default() += c.evidence;
        }
    }
    for row in rows.values_mut() {
        let sum: f64 = row.iter().map(|e| e.1).sum();
        for e in row.iter_mut() {
            e.1 /= sum;
        }
    }
    let unmapped = (0..target.len() as TokenId).filter(|t| !rows.contains_key(t)).collect();
    let smoothed_only = evidence.into_iter().filter(|&(_, e)| e == 0.0).map(|(t, _)| t).collect();
    Ok(TokenMapping {
        source_vocab_hash: source.content_hash(),
        target_vocab_hash: target.content_hash(),
        source_vocab_size: source.len(),
        target_vocab_size: target.len(),
        rows,
        unmapped,
        smoothed_only,
        provenance,
    })
}

impl TokenMapping {
    /// Maps every token of `vocab` to itself with weight 1.
    pub fn identity(vocab: &Vocab) -> TokenMapping {
        TokenMapping {
            source_vocab_hash: vocab.content_hash(),
            target_vocab_hash: vocab.content_hash(),
            source_vocab_size: vocab.len(),
            target_vocab_size: vocab.len(),
            rows: (0..vocab.len() as TokenId).map(|t| (t, vec![(t, 1.0)])).collect(),
            unmapped: BTreeSet::new(),
            smoothed_only: BTreeSet::new(),
            provenance: Provenance {
                strategy: SplitStrategy::Average,
                min_count: 0.0,
                threshold_stage: ThresholdStage::Word,
                exempt_smoothed: true,
            },
        }
    }

    pub fn row(&self, target: TokenId) -> Option<&[(TokenId, f64)]> {
        self.rows.get(&target).map(Vec::as_slice)
    }

    pub fn validate(&self) -> Result<(), MapError> {
        let bad = |m: String| Err(MapError::InvalidMapping(m));
        for (&t, row) in &self.rows {
            if t as usize >= self.target_vocab_size {
                return bad(format!("target id {t} outside vocabulary of {}", self.target_vocab_size));
            }
            if row.is_empty() {
                return bad(format!("row {t} is empty"));
            }
            if row.windows(2).any(|w| w[0].0 >= w[1].0) {
                return bad(format!("row {t} source ids not strictly increasing"));
            }
            let mut sum = 0.0;
            for &(s, w) in row {
                if s as usize >= self.source_vocab_size {
                    return bad(format!("row {t}: source id {s} outside vocabulary of {}", self.source_vocab_size));
                }
                if !(w > 0.0 && w.is_finite()) {
                    return bad(format!("row {t}: non-positive weight {w}"));
                }
                sum += w;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return bad(format!("row {t} sums to {sum}"));
            }
            if self.unmapped.contains(&t) {
                return bad(format!("token {t} both mapped and unmapped"));
            }
        }
        if let Some(&t) = self.unmapped.iter().find(|&&t| t as usize >= self.target_vocab_size) {
            return bad(format!("unmapped id {t} outside vocabulary"));
        }
        if self.rows.len() + self.unmapped.len() != self.target_vocab_size {
            return bad("rows and unmapped do not cover the target vocabulary".into());
        }
        Ok(())
    }

    /// Fails unless the mapping was built for exactly these vocabularies.
    pub fn check_vocabs(&self, source: &Vocab, target: &Vocab) -> Result<(), MapError> {
        if self.source_vocab_hash != source.content_hash() {
            return Err(MapError::VocabHashMismatch { side: "source" });
        }
        if self.target_vocab_hash != target.content_hash() {
            return Err(MapError::VocabHashMismatch { side: "target" });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("mapping serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, MapError> {
        let mapping: TokenMapping = serde_json::from_str(text)?;
        mapping.validate()?;
        Ok(mapping)
    }

    pub fn save(&self, path: &Path) -> Result<(), MapError> {
        crate::write_atomic(path, self.to_json().as_bytes()).map_err(|source| MapError::Io {
            path: path.to_owned(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, MapError> {
        let text = std::fs::read_to_string(path).map_err(|source| MapError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// One line per mapped token, e.g.
    /// `_vijftien := 0.52*_fifteen + 0.46*_15 + 0.01*_Fif + 0.01*teen`.
    pub fn to_readable(&self, source: &Vocab, target: &Vocab) -> String {
        let mut out = String::new();
        for (&t, row) in &self.rows {
            let mut terms = row.clone();
            terms.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let _ = write!(out, "{} :=", target.token(t).unwrap_or("?"));
            for (k, (s, w)) in terms.iter().enumerate() {
                let sep = if k == 0 { " " } else { " + " };
                let _ = write!(out, "{sep}{w:.2}*{}", source.token(*s).unwrap_or("?"));
            }
            out.push('\n');
        }
        out
    }

    /// Shannon entropy of a row in bits.
    pub fn row_entropy_bits(&self, target: TokenId) -> Option<f64> {
        self.row(target)
            .map(|row| -row.iter().map(|&(_, w)| w * w.log2()).sum::<f64>())
    }
}

/// Several mappings into the same target vocabulary.
#[derive(Debug, Clone)]
pub struct MappingBundle {
    pub mappings: Vec<TokenMapping>,
    /// For each target token, how many mappings give it a row.
    pub coverage: Vec<u32>,
}

pub fn merge_mappings(maps: Vec<TokenMapping>) -> Result<MappingBundle, MapError> {
    let Some(first) = maps.first() else {
        return Err(MapError::InvalidMapping("no mappings to merge".into()));
    };
    let (hash, size) = (first.target_vocab_hash.clone(), first.target_vocab_size);
    let mut coverage = vec![0u32; size];
    for m in &maps {
        if m.target_vocab_hash != hash || m.target_vocab_size != size {
            return Err(MapError::TargetVocabMismatch {
                expected: hash,
                found: m.target_vocab_hash.clone(),
            });
        }
        for &t in m.rows.keys() {
            coverage[t as usize] += 1;
        }
    }
    Ok(MappingBundle { mappings: maps, coverage })
}
