use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use super::diagonal::{expected_feature, feature, DiagonalParams};
use super::{symmetrize, AlignDirection, AlignError, AlignmentCorpus, SentenceAlignment, WordInterner};
use crate::wordizer::{TokenId, WordSequence};

/// Probability assumed for word pairs absent from the table at decoding time.
pub const FLOOR_PROB: f64 = 1e-12;

/// Sentences per shard. Fixed so results do not depend on thread count.
const SHARD_SIZE: usize = 256;
/// Shards processed per parallel wave; bounds partial-count memory.
const WAVE_SHARDS: usize = 64;
const LAMBDA_STEP: f64 = 20.0;
const LAMBDA_MIN: f64 = 0.1;
const LAMBDA_MAX: f64 = 14.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignerConfig {
    pub iterations: usize,
    #[serde(flatten)]
    pub params: DiagonalParams,
    pub optimize_lambda: bool,
    /// Gradient steps on the tension per EM iteration, from the second on.
    pub lambda_steps: usize,
}

impl Default for AlignerConfig {
    fn default() -> Self {
        Self {
            iterations: 5,
            params: DiagonalParams::default(),
            optimize_lambda: true,
            lambda_steps: 8,
        }
    }
}

impl AlignerConfig {
    pub fn validate(&self) -> Result<(), AlignError> {
        if self.iterations == 0 {
            return Err(AlignError::InvalidParams("iterations must be >= 1".into()));
        }
        self.params.validate()
    }
}

/// Lexical translation probabilities `t(target word | source word)`.
///
/// Stored sparsely over co-occurring pairs: one row per source word plus a
/// leading row for the null word, columns sorted by target word id.
#[derive(Debug, Clone)]
pub struct TranslationTable {
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    probs: Vec<f64>,
}

impl TranslationTable {
    fn from_cooccurrence(corpus: &AlignmentCorpus) -> Self {
        let slots = corpus.source_words.len() + 1;
        let mut keys: Vec<u64> = corpus
            .pairs
            .par_chunks(SHARD_SIZE)
            .flat_map_iter(|shard| {
                let mut keys = Vec::new();
                for pair in shard {
                    for &t in pair.target.iter() {
                        keys.push(t as u64);
                        for &s in pair.source.iter() {
                            keys.push(((s as u64 + 1) << 32) | t as u64);
                        }
                    }
                }
                keys.sort_unstable();
                keys.dedup();
                keys
            })
            .collect();
        keys.par_sort_unstable();
        keys.dedup();

        let mut row_ptr = vec![0usize; slots + 1];
        for &k in &keys {
            row_ptr[(k >> 32) as usize + 1] += 1;
        }
        for s in 0..slots {
            row_ptr[s + 1] += row_ptr[s];
        }
        let cols = keys.iter().map(|&k| k as u32).collect();
        let uniform = 1.0 / corpus.target_words.len().max(1) as f64;
        Self {
            row_ptr,
            probs: vec![uniform; keys.len()],
            cols,
        }
    }

    #[inline]
    fn index(&self, slot: usize, target: u32) -> Option<usize> {
        let (lo, hi) = (*self.row_ptr.get(slot)?, self.row_ptr[slot + 1]);
        self.cols[lo..hi].binary_search(&target).ok().map(|k| lo + k)
    }

    /// `t(target | source)`; `None` is the null word. Absent pairs give
    /// [`FLOOR_PROB`].
    pub fn prob(&self, source: Option<u32>, target: u32) -> f64 {
        let slot = source.map_or(0, |s| s as usize + 1);
        self.index(slot, target).map_or(FLOOR_PROB, |k| self.probs[k])
    }

    pub fn row(&self, source: Option<u32>) -> impl Iterator<Item = (u32, f64)> + '_ {
        let slot = source.map_or(0, |s| s as usize + 1);
        let range = self.row_ptr[slot]..self.row_ptr[slot + 1];
        self.cols[range.clone()].iter().copied().zip(self.probs[range].iter().copied())
    }

    /// Number of stored (source, target) entries.
    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn source_slots(&self) -> usize {
        self.row_ptr.len() - 1
    }

    fn normalize(&mut self, counts: &[f64], vb_alpha: f64) {
        for slot in 0..self.source_slots() {
            let range = self.row_ptr[slot]..self.row_ptr[slot + 1];
            let row = &counts[range.clone()];
            if vb_alpha > 0.0 {
                let total: f64 = row.iter().map(|c| c + vb_alpha).sum();
                let log_total = digamma(total);
                for (p, c) in self.probs[range].iter_mut().zip(row) {
                    *p = (digamma(c + vb_alpha) - log_total).exp();
                }
            } else {
                let total: f64 = row.iter().sum();
                if total > 0.0 {
                    for (p, c) in self.probs[range].iter_mut().zip(row) {
                        *p = c / total;
                    }
                }
            }
        }
    }
}

#[derive(Default)]
struct Scratch {
    prior: Vec<f64>,
    post: Vec<f64>,
    idx: Vec<Option<usize>>,
}

/// Posterior over source positions `0..=m` for target word `j` (1-based).
/// Returns the marginal likelihood of the target word.
fn posterior(
    table: &TranslationTable,
    params: &DiagonalParams,
    source: &[u32],
    target_word: u32,
    j: usize,
    n: usize,
    s: &mut Scratch,
) -> f64 {
    let m = source.len();
    if m == 0 {
        s.prior.clear();
        s.prior.push(1.0);
    } else {
        params.prior(j, m, n, &mut s.prior);
    }
    s.idx.clear();
    s.idx.push(table.index(0, target_word));
    s.idx.extend(source.iter().map(|&w| table.index(w as usize + 1, target_word)));
    s.post.clear();
    let mut total = 0.0;
    for (d, ix) in s.prior.iter().zip(&s.idx) {
        let p = d * ix.map_or(FLOOR_PROB, |k| table.probs[k]);
        s.post.push(p);
        total += p;
    }
    if total > 0.0 && total.is_finite() {
        s.post.iter_mut().for_each(|p| *p /= total);
        total
    } else {
        // Underflow: fall back to the prior alone rather than emit NaN.
        s.post.clone_from(&s.prior);
        f64::MIN_POSITIVE
    }
}

#[derive(Default)]
struct ShardStats {
    counts: Vec<(usize, f64)>,
    log_likelihood: f64,
    empirical_feature: f64,
    non_null_mass: BTreeMap<(u32, u32, u32), f64>,
    target_tokens: u64,
}

fn estep_shard(
    table: &TranslationTable,
    params: &DiagonalParams,
    shard: &[super::WordIdPair],
    track_lambda: bool,
) -> ShardStats {
    let mut st = ShardStats::default();
    let mut s = Scratch::default();
    for pair in shard {
        let (m, n) = (pair.source.len(), pair.target.len());
        for (jj, &e) in pair.target.iter().enumerate() {
            let j = jj + 1;
            st.log_likelihood += posterior(table, params, &pair.source, e, j, n, &mut s).ln();
            for (q, ix) in s.post.iter().zip(&s.idx) {
                if let Some(k) = ix {
                    st.counts.push((*k, *q));
                }
            }
            if track_lambda && m > 0 {
                for i in 1..=m {
                    st.empirical_feature += s.post[i] * feature(i, j, m, n);
                }
                *st.non_null_mass.entry((m as u32, n as u32, j as u32)).or_default() += 1.0 - s.post[0];
            }
        }
        st.target_tokens += n as u64;
    }
    // Stable sort keeps per-entry accumulation in sentence order.
    st.counts.sort_by_key(|&(k, _)| k);
    st.counts.dedup_by(|b, a| {
        if a.0 == b.0 {
            a.1 += b.1;
            true
        } else {
            false
        }
    });
    st
}

struct IterationStats {
    counts: Vec<f64>,
    log_likelihood: f64,
    empirical_feature: f64,
    non_null_mass: BTreeMap<(u32, u32, u32), f64>,
    target_tokens: u64,
}

fn estep(table: &TranslationTable, params: &DiagonalParams, corpus: &AlignmentCorpus, track_lambda: bool) -> IterationStats {
    let mut out = IterationStats {
        counts: vec![0.0; table.nnz()],
        log_likelihood: 0.0,
        empirical_feature: 0.0,
        non_null_mass: BTreeMap::new(),
        target_tokens: 0,
    };
    let shards: Vec<_> = corpus.pairs.chunks(SHARD_SIZE).collect();
    for wave in shards.chunks(WAVE_SHARDS) {
        let partials: Vec<ShardStats> = wave
            .par_iter()
            .map(|shard| estep_shard(table, params, shard, track_lambda))
            .collect();
        for p in partials {
            for (k, v) in p.counts {
                out.counts[k] += v;
            }
            out.log_likelihood += p.log_likelihood;
            out.empirical_feature += p.empirical_feature;
            for (key, v) in p.non_null_mass {
                *out.non_null_mass.entry(key).or_default() += v;
            }
            out.target_tokens += p.target_tokens;
        }
    }
    out
}

fn optimize_lambda(mut lambda: f64, stats: &IterationStats, steps: usize) -> f64 {
    let toks = stats.target_tokens.max(1) as f64;
    let emp = stats.empirical_feature / toks;
    for _ in 0..steps {
        let model: f64 = stats
            .non_null_mass
            .iter()
            .map(|(&(m, n, j), &mass)| mass * expected_feature(j as usize, m as usize, n as usize, lambda))
            .sum::<f64>()
            / toks;
        lambda = (lambda + LAMBDA_STEP * (emp - model)).clamp(LAMBDA_MIN, LAMBDA_MAX);
    }
    lambda
}

/// A trained alignment model for one direction.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    table: TranslationTable,
    params: DiagonalParams,
    log_likelihoods: Vec<f64>,
    source_words: WordInterner,
    target_words: WordInterner,
}

/// Runs EM on `corpus`, generating target words from source words.
pub fn em_train(corpus: &AlignmentCorpus, config: &AlignerConfig) -> Result<TrainedModel, AlignError> {
    config.validate()?;
    if corpus.pairs.iter().all(|p| p.target.is_empty()) {
        return Err(AlignError::EmptyCorpus);
    }
    let mut table = TranslationTable::from_cooccurrence(corpus);
    let mut params = config.params;
    let mut log_likelihoods = Vec::with_capacity(config.iterations);
    for iter in 0..config.iterations {
        let tune = config.optimize_lambda && iter >= 1 && config.lambda_steps > 0;
        let stats = estep(&table, &params, corpus, tune);
        log::debug!(
            "EM iteration {}: log-likelihood {:.6} lambda {:.4}",
            iter + 1,
            stats.log_likelihood,
            params.lambda
        );
        log_likelihoods.push(stats.log_likelihood);
        table.normalize(&stats.counts, params.vb_alpha);
        if tune {
            params.lambda = optimize_lambda(params.lambda, &stats, config.lambda_steps);
        }
    }
    Ok(TrainedModel {
        table,
        params,
        log_likelihoods,
        source_words: corpus.source_words.clone(),
        target_words: corpus.target_words.clone(),
    })
}

impl TrainedModel {
    pub fn table(&self) -> &TranslationTable {
        &self.table
    }

    /// Parameters after training, including the tuned tension.
    pub fn params(&self) -> DiagonalParams {
        self.params
    }

    /// Corpus log-likelihood measured in the E-step of each iteration.
    pub fn log_likelihoods(&self) -> &[f64] {
        &self.log_likelihoods
    }

    /// `t(target | source)` by token decomposition; `None` is the null word.
    pub fn prob(&self, source: Option<&[TokenId]>, target: &[TokenId]) -> f64 {
        let Some(t) = self.target_words.get(target) else {
            return FLOOR_PROB;
        };
        match source {
            None => self.table.prob(None, t),
            Some(s) => match self.source_words.get(s) {
                Some(s) => self.table.prob(Some(s), t),
                None => FLOOR_PROB,
            },
        }
    }

    /// Posterior rows `q(a_j = i)` for each target word, `i = 0..=m`.
    pub fn posteriors(&self, source: &[u32], target: &[u32]) -> Vec<Vec<f64>> {
        let mut s = Scratch::default();
        (0..target.len())
            .map(|jj| {
                posterior(&self.table, &self.params, source, target[jj], jj + 1, target.len(), &mut s);
                s.post.clone()
            })
            .collect()
    }

    /// Most probable source position per target word; ties go to the
    /// smaller position and null yields no link.
    pub fn viterbi(&self, source: &[u32], target: &[u32]) -> Vec<(u32, u32)> {
        self.viterbi_slots(&source.iter().map(|&w| Some(w)).collect::<Vec<_>>(), &target.iter().map(|&w| Some(w)).collect::<Vec<_>>())
    }

    fn viterbi_slots(&self, source: &[Option<u32>], target: &[Option<u32>]) -> Vec<(u32, u32)> {
        let (m, n) = (source.len(), target.len());
        let mut prior = Vec::new();
        let mut links = Vec::new();
        for (jj, &e) in target.iter().enumerate() {
            let j = jj + 1;
            if m == 0 {
                continue;
            }
            self.params.prior(j, m, n, &mut prior);
            let t = |f: Option<u32>| e.map_or(FLOOR_PROB, |e| self.table.prob(f, e));
            let mut best = (0usize, prior[0] * t(None));
            for (ii, &f) in source.iter().enumerate() {
                let p = prior[ii + 1] * f.map_or(FLOOR_PROB, |f| t(Some(f)));
                if p > best.1 {
                    best = (ii + 1, p);
                }
            }
            if best.0 > 0 {
                links.push((best.0 as u32, j as u32));
            }
        }
        links
    }

    /// Viterbi alignment of an arbitrary sentence pair. Unseen words fall
    /// back to [`FLOOR_PROB`].
    pub fn viterbi_align(&self, source: &WordSequence, target: &WordSequence, ordinal: usize) -> SentenceAlignment {
        let src: Vec<_> = source.words.iter().map(|w| self.source_words.get(&w.tokens)).collect();
        let tgt: Vec<_> = target.words.iter().map(|w| self.target_words.get(&w.tokens)).collect();
        SentenceAlignment::new(ordinal, src.len(), tgt.len(), self.viterbi_slots(&src, &tgt))
    }

    /// Aligns every sentence of the corpus the model was trained on.
    pub fn align_corpus(&self, corpus: &AlignmentCorpus) -> Vec<SentenceAlignment> {
        debug_assert_eq!(corpus.source_words.len(), self.source_words.len());
        corpus
            .pairs
            .par_iter()
            .enumerate()
            .map(|(k, p)| SentenceAlignment::new(k, p.source.len(), p.target.len(), self.viterbi(&p.source, &p.target)))
            .collect()
    }
}

/// Trains the requested direction(s) and returns one source-to-target
/// alignment per sentence.
pub fn align_bidirectional(
    corpus: &AlignmentCorpus,
    config: &AlignerConfig,
    direction: AlignDirection,
) -> Result<Vec<SentenceAlignment>, AlignError> {
    let forward = || -> Result<_, AlignError> { Ok(em_train(corpus, config)?.align_corpus(corpus)) };
    let reverse = || -> Result<_, AlignError> {
        let rev = corpus.reversed();
        let model = em_train(&rev, config)?;
        Ok(model.align_corpus(&rev).iter().map(SentenceAlignment::transposed).collect::<Vec<_>>())
    };
    match direction {
        AlignDirection::Forward => forward(),
        AlignDirection::Reverse => reverse(),
        AlignDirection::Both(mode) => {
            let (f, r) = (forward()?, reverse()?);
            f.iter().zip(&r).map(|(a, b)| symmetrize(a, b, mode)).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aligner::WordIdPair;

    fn corpus(pairs: &[(&[u32], &[u32])]) -> AlignmentCorpus {
        let mut c = AlignmentCorpus::new();
        let max_s = pairs.iter().flat_map(|p| p.0.iter()).max().copied().unwrap_or(0);
        let max_t = pairs.iter().flat_map(|p| p.1.iter()).max().copied().unwrap_or(0);
        for w in 0..=max_s {
            c.source_words.intern(&[w]);
        }
        for w in 0..=max_t {
            c.target_words.intern(&[w]);
        }
        for (s, t) in pairs {
            c.pairs.push(WordIdPair { source: (*s).into(), target: (*t).into() });
        }
        c
    }

    fn ml(iterations: usize) -> AlignerConfig {
        AlignerConfig {
            iterations,
            params: DiagonalParams { lambda: 4.0, p0: 0.08, vb_alpha: 0.0 },
            optimize_lambda: false,
            lambda_steps: 8,
        }
    }

    #[test]
    fn single_pair_converges() {
        let pairs: Vec<(&[u32], &[u32])> = vec![(&[0], &[0]); 100];
        let model = em_train(&corpus(&pairs), &ml(5)).unwrap();
        assert!(model.table().prob(Some(0), 0) >= 0.999);
        assert_eq!(model.viterbi(&[0], &[0]), vec![(1, 1)]);
    }

    #[test]
    fn three_way_posterior_by_hand() {
        let c = corpus(&[(&[0, 1], &[0])]);
        let cfg = AlignerConfig {
            iterations: 1,
            params: DiagonalParams { lambda: 0.0, p0: 0.08, vb_alpha: 0.0 },
            ..ml(1)
        };
        let table = TranslationTable::from_cooccurrence(&c);
        let model = TrainedModel {
            table,
            params: cfg.params,
            log_likelihoods: vec![],
            source_words: c.source_words.clone(),
            target_words: c.target_words.clone(),
        };
        let q = model.posteriors(&[0, 1], &[0]);
        assert!((q[0][0] - 0.08).abs() < 1e-12);
        assert!((q[0][1] - 0.46).abs() < 1e-12);
        assert!((q[0][2] - 0.46).abs() < 1e-12);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(em_train(&AlignmentCorpus::new(), &ml(1)), Err(AlignError::EmptyCorpus)));
        let mut bad = ml(1);
        bad.iterations = 0;
        assert!(em_train(&corpus(&[(&[0], &[0])]), &bad).is_err());
    }

    #[test]
    fn ml_rows_normalize() {
        let c = corpus(&[(&[0, 1], &[0, 1]), (&[0], &[0]), (&[1, 2], &[2, 1])]);
        let model = em_train(&c, &ml(3)).unwrap();
        for slot in [None, Some(0), Some(1), Some(2)] {
            let total: f64 = model.table().row(slot).map(|(_, p)| p).sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn vb_mode_and_lambda_tuning_stay_finite() {
        let c = corpus(&[(&[0, 1, 2], &[0, 1, 2]), (&[0, 2], &[0, 2]), (&[1, 2, 0], &[1, 2, 0])]);
        let model = em_train(&c, &AlignerConfig::default()).unwrap();
        assert!(model.log_likelihoods().iter().all(|l| l.is_finite()));
        let lambda = model.params().lambda;
        assert!((LAMBDA_MIN..=LAMBDA_MAX).contains(&lambda));
        for slot in [None, Some(0), Some(1), Some(2)] {
            let total: f64 = model.table().row(slot).map(|(_, p)| p).sum();
            assert!(total > 0.0 && total <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn diagonal_wins_with_uniform_table_and_high_tension() {
        let c = corpus(&[(&[0, 1, 2, 3], &[4, 5, 6, 7])]);
        let table = TranslationTable::from_cooccurrence(&c);
        let params = DiagonalParams { lambda: 40.0, p0: 0.08, vb_alpha: 0.0 };
        let model = TrainedModel {
            table,
            params,
            log_likelihoods: vec![],
            source_words: c.source_words.clone(),
            target_words: c.target_words.clone(),
        };
        let (m, n) = (4usize, 4usize);
        let links = model.viterbi(&[0, 1, 2, 3], &[4, 5, 6, 7]);
        let mut prior = Vec::new();
        for j in 1..=n {
            params.prior(j, m, n, &mut prior);
            let argmax = (1..=m).fold(1, |b, i| if prior[i] > prior[b] { i } else { b });
            assert!(links.contains(&(argmax as u32, j as u32)));
            assert_eq!(argmax, ((j * m) as f64 / n as f64).round() as usize);
        }
    }

    #[test]
    fn floor_ties_resolve_to_smallest_position() {
        let c = corpus(&[(&[0, 1], &[0])]);
        let model = em_train(&c, &ml(1)).unwrap();
        let unseen = WordSequence {
            words: vec![
                crate::wordizer::WordUnit { tokens: vec![90], is_letter_word: true },
                crate::wordizer::WordUnit { tokens: vec![91], is_letter_word: true },
            ],
        };
        let tgt = WordSequence {
            words: vec![crate::wordizer::WordUnit { tokens: vec![92], is_letter_word: true }],
        };
        let params = DiagonalParams { lambda: 0.0, ..model.params };
        let model = TrainedModel { params, ..model };
        // every probability is floored, so the prior decides; both source
        // positions tie and the first wins
        let a = model.viterbi_align(&unseen, &tgt, 7);
        assert_eq!(a.links, vec![(1, 1)]);
        assert_eq!(a.ordinal, 7);
    }
}
