use std::collections::BTreeMap;

use super::{survives, MapError, PairCount, SplitStrategy, Threshold, WordPairCounts};
use crate::wordizer::TokenId;

/// Per-token counts keyed by `(target token, source token)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TokenAlignmentCounts {
    pub counts: BTreeMap<(TokenId, TokenId), PairCount>,
}

impl TokenAlignmentCounts {
    pub fn get(&self, target: TokenId, source: TokenId) -> Option<PairCount> {
        self.counts.get(&(target, source)).copied()
    }

    pub fn total(&self) -> f64 {
        self.counts.values().map(PairCount::total).sum()
    }
}

impl Threshold for TokenAlignmentCounts {
    fn apply_threshold(mut self, min_count: f64, exempt_smoothed: bool) -> Self {
        self.counts.retain(|_, c| survives(c, min_count, exempt_smoothed));
        self
    }
}

/// Length of the overlap of target piece `t` and source piece `s` when both
/// words are laid over a common axis of `T * S` units.
fn overlap_units(t: usize, s: usize, tn: usize, sn: usize) -> usize {
    let (t0, t1) = (t * sn, (t + 1) * sn);
    let (s0, s1) = (s * tn, (s + 1) * tn);
    t1.min(s1).saturating_sub(t0.max(s0))
}

/// Distributes every word-pair count over token pairs. Each target token
/// of a pair with count `C` receives exactly `C` in total.
pub fn split_to_tokens(counts: &WordPairCounts, strategy: SplitStrategy) -> Result<TokenAlignmentCounts, MapError> {
    let mut out = TokenAlignmentCounts::default();
    for (source, target, c) in counts.iter() {
        let (sn, tn) = (source.len(), target.len());
        if sn == 0 || tn == 0 {
            return Err(MapError::EmptyWord);
        }
        for (ti, &t) in target.iter().enumerate() {
            for (si, &s) in source.iter().enumerate() {
                // all-to-all gives 1/S, in-order gives overlap/S
                let overlap = overlap_units(ti, si, tn, sn);
                let (num, den) = match strategy {
                    SplitStrategy::AllToAll => (1, sn),
                    SplitStrategy::InOrder => (overlap, sn),
                    SplitStrategy::Average => (1 + overlap, 2 * sn),
                };
                if num > 0 {
                    out.counts.entry((t, s)).or_default().add(c.scaled(num, den));
                }
            }
        }
    }
    Ok(out)
}
