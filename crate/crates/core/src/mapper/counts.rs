use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use super::{survives, MapError, PairCount, Threshold};
use crate::aligner::{AlignmentCorpus, SentenceAlignment};
use crate::wordizer::{TokenId, Vocab, WordSequence};

const SHARD_SIZE: usize = 1024;

/// Counts per `(source word, target word)`, each word kept as its token ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WordPairCounts {
    entries: BTreeMap<(Vec<TokenId>, Vec<TokenId>), PairCount>,
}

impl WordPairCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, source: &[TokenId], target: &[TokenId]) -> Option<PairCount> {
        self.entries.get(&(source.to_vec(), target.to_vec())).copied()
    }

    /// Entries in `(source, target)` order.
    pub fn iter(&self) -> impl Iterator<Item = (&[TokenId], &[TokenId], PairCount)> + '_ {
        self.entries.iter().map(|((s, t), c)| (s.as_slice(), t.as_slice(), *c))
    }

    pub fn add_evidence(&mut self, source: &[TokenId], target: &[TokenId], count: f64) {
        self.entries.entry((source.to_vec(), target.to_vec())).or_default().evidence += count;
    }

    pub fn add_smoothing(&mut self, source: &[TokenId], target: &[TokenId], count: f64) {
        self.entries.entry((source.to_vec(), target.to_vec())).or_default().smoothing += count;
    }

    pub fn total(&self) -> f64 {
        self.entries.values().map(PairCount::total).sum()
    }
}

impl Threshold for WordPairCounts {
    fn apply_threshold(mut self, min_count: f64, exempt_smoothed: bool) -> Self {
        self.entries.retain(|_, c| survives(c, min_count, exempt_smoothed));
        self
    }
}

fn check_link(a: &SentenceAlignment, i: u32, j: u32, m: usize, n: usize) -> Result<(), MapError> {
    if i == 0 || j == 0 || i as usize > m || j as usize > n {
        return Err(MapError::LinkOutOfBounds {
            ordinal: a.ordinal,
            src: i,
            tgt: j,
            src_len: m,
            tgt_len: n,
        });
    }
    Ok(())
}

/// Adds one per alignment link to the count of the linked word pair.
pub fn count_word_pairs<'a, I>(alignments: I) -> Result<WordPairCounts, MapError>
where
    I: IntoIterator<Item = (&'a WordSequence, &'a WordSequence, &'a SentenceAlignment)>,
{
    let mut tally: HashMap<(&[TokenId], &[TokenId]), u64> = HashMap::new();
    for (source, target, a) in alignments {
        for &(i, j) in &a.links {
            check_link(a, i, j, source.len(), target.len())?;
            let key = (
                source.words[i as usize - 1].tokens.as_slice(),
                target.words[j as usize - 1].tokens.as_slice(),
            );
            *tally.entry(key).or_default() += 1;
        }
    }
    let mut counts = WordPairCounts::new();
    for ((s, t), n) in tally {
        counts.add_evidence(s, t, n as f64);
    }
    Ok(counts)
}

/// [`count_word_pairs`] over an interned corpus, sharded across threads.
/// `alignments[k]` must belong to `corpus.pairs[k]`.
pub fn count_word_pairs_interned(
    corpus: &AlignmentCorpus,
    alignments: &[SentenceAlignment],
) -> Result<WordPairCounts, MapError> {
    if corpus.len() != alignments.len() {
        return Err(MapError::AlignmentCount(alignments.len(), corpus.len()));
    }
    let partials: Vec<HashMap<(u32, u32), u64>> = corpus
        .pairs
        .par_chunks(SHARD_SIZE)
        .zip(alignments.par_chunks(SHARD_SIZE))
        .map(|(pairs, aligns)| {
            let mut tally = HashMap::new();
            for (p, a) in pairs.iter().zip(aligns) {
                for &(i, j) in &a.links {
                    check_link(a, i, j, p.source.len(), p.target.len())?;
                    *tally.entry((p.source[i as usize - 1], p.target[j as usize - 1])).or_default() += 1;
                }
            }
            Ok(tally)
        })
        .collect::<Result<_, MapError>>()?;
    let mut merged: HashMap<(u32, u32), u64> = HashMap::new();
    for part in partials {
        for (k, v) in part {
            *merged.entry(k).or_default() += v;
        }
    }
    let mut counts = WordPairCounts::new();
    for ((s, t), n) in merged {
        counts.add_evidence(corpus.source_words.word(s), corpus.target_words.word(t), n as f64);
    }
    Ok(counts)
}

fn format_count(c: f64) -> String {
    if c.fract() == 0.0 && c.abs() < 9.0e15 {
        format!("{}", c as i64)
    } else {
        format!("{c}")
    }
}

/// Writes `count<TAB>target word<TAB>source word` lines, largest count first.
pub fn write_counts_tsv(counts: &WordPairCounts, source: &Vocab, target: &Vocab, path: &Path) -> Result<(), MapError> {
    let mut rows: Vec<(f64, String, String)> = counts
        .iter()
        .map(|(s, t, c)| (c.total(), target.word_key(t), source.word_key(s)))
        .collect();
    rows.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| (&a.1, &a.2).cmp(&(&b.1, &b.2))));
    let mut text = String::new();
    for (c, t, s) in rows {
        let _ = writeln!(text, "{}\t{t}\t{s}", format_count(c));
    }
    crate::write_atomic(path, text.as_bytes()).map_err(|source| MapError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Reads counts written by [`write_counts_tsv`]. All counts load as evidence.
pub fn read_counts_tsv(path: &Path, source: &Vocab, target: &Vocab) -> Result<WordPairCounts, MapError> {
    let text = std::fs::read_to_string(path).map_err(|e| MapError::Io {
        path: path.to_owned(),
        source: e,
    })?;
    parse_counts_tsv(&text, source, target)
}

pub(crate) fn parse_counts_tsv(text: &str, source: &Vocab, target: &Vocab) -> Result<WordPairCounts, MapError> {
    let mut counts = WordPairCounts::new();
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| MapError::CountsFormat { line: line_no, message };
        let fields: Vec<&str> = line.split('\t').collect();
        let [count, tgt, src] = fields[..] else {
            return Err(err(format!("expected 3 tab-separated fields, found {}", fields.len())));
        };
        let count: f64 = count
            .trim()
            .parse()
            .ok()
            .filter(|c: &f64| c.is_finite() && *c >= 0.0)
            .ok_or_else(|| err(format!("invalid count {count:?}")))?;
        let tgt = target.parse_word_key(tgt.trim()).map_err(|e| err(e.to_string()))?;
        let src = source.parse_word_key(src.trim()).map_err(|e| err(e.to_string()))?;
        counts.add_evidence(&src, &tgt, count);
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wordizer::{MarkerStyle, WordUnit};

    fn seq(words: &[&[u32]]) -> WordSequence {
        WordSequence {
            words: words
                .iter()
                .map(|w| WordUnit {
                    tokens: w.to_vec(),
                    is_letter_word: true,
                })
                .collect(),
        }
    }

    fn vocab(tokens: &[&str]) -> Vocab {
        Vocab::new(
            tokens.iter().map(|s| s.to_string()).collect(),
            MarkerStyle::WordStartPrefix("_".into()),
            [],
            false,
        )
        .unwrap()
    }

    #[test]
    fn each_link_counts_once() {
        let s = seq(&[&[0], &[1, 2]]);
        let t = seq(&[&[5]]);
        let a = SentenceAlignment::new(0, 2, 1, vec![(2, 1)]);
        let items: Vec<_> = (0..13).map(|_| (&s, &t, &a)).collect();
        let counts = count_word_pairs(items).unwrap();
        assert_eq!(counts.len(), 1);
        assert_eq!(counts.get(&[1, 2], &[5]).unwrap().evidence, 13.0);
        assert!(count_word_pairs(std::iter::empty()).unwrap().is_empty());
    }

    #[test]
    fn out_of_bounds_link_names_sentence() {
        let s = seq(&[&[0]]);
        let t = seq(&[&[5]]);
        let a = SentenceAlignment::new(42, 1, 1, vec![(2, 1)]);
        assert!(matches!(
            count_word_pairs([(&s, &t, &a)]),
            Err(MapError::LinkOutOfBounds { ordinal: 42, .. })
        ));
    }

    #[test]
    fn interned_path_matches_direct() {
        let pairs = [
            (seq(&[&[0], &[1, 2]]), seq(&[&[5], &[6]])),
            (seq(&[&[1, 2]]), seq(&[&[6], &[5], &[6]])),
        ];
        let aligns = [
            SentenceAlignment::new(0, 2, 2, vec![(1, 1), (2, 2), (2, 1)]),
            SentenceAlignment::new(1, 1, 3, vec![(1, 1), (1, 3)]),
        ];
        let corpus: AlignmentCorpus = pairs.iter().map(|(s, t)| (s, t)).collect();
        let direct = count_word_pairs(pairs.iter().zip(&aligns).map(|((s, t), a)| (s, t, a))).unwrap();
        assert_eq!(count_word_pairs_interned(&corpus, &aligns).unwrap(), direct);
        assert_eq!(direct.get(&[1, 2], &[6]).unwrap().evidence, 3.0);
        assert!(matches!(
            count_word_pairs_interned(&corpus, &aligns[..1]),
            Err(MapError::AlignmentCount(1, 2))
        ));
    }

    #[test]
    fn tsv_round_trip_and_layout() {
        let src = vocab(&["_fifteen", "_15", "_Fif", "teen"]);
        let tgt = vocab(&["_vijftien"]);
        let mut counts = WordPairCounts::new();
        counts.add_evidence(&[0], &[0], 13721.0);
        counts.add_evidence(&[1], &[0], 12293.0);
        counts.add_evidence(&[2, 3], &[0], 544.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("counts.tsv");
        write_counts_tsv(&counts, &src, &tgt, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "13721\t_vijftien\t_fifteen\n12293\t_vijftien\t_15\n544\t_vijftien\t_Fif teen\n"
        );
        assert_eq!(read_counts_tsv(&path, &src, &tgt).unwrap(), counts);
    }

    #[test]
    fn tsv_errors_carry_line_numbers() {
        let src = vocab(&["_a"]);
        let tgt = vocab(&["_b"]);
        for (text, line) in [("1\t_b\n", 1), ("1\t_b\t_a\nx\t_b\t_a\n", 2), ("1\t_b\t_zz\n", 1), ("-1\t_b\t_a", 1)] {
            match parse_counts_tsv(text, &src, &tgt) {
                Err(MapError::CountsFormat { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
        // padded count column as printed in hand-made tables
        let c = parse_counts_tsv("544  \t_b\t_a\n\n", &src, &tgt).unwrap();
        assert_eq!(c.get(&[0], &[0]).unwrap().evidence, 544.0);
    }
}
