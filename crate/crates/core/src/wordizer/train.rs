use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};

use rayon::prelude::*;

use super::bpe::{base_symbol, merged_surface, pretokenize};
use super::{MarkerStyle, MergeRules, TokenId, Vocab, WordizerError};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Final vocabulary size including special and byte-fallback tokens.
    pub vocab_size: usize,
    pub marker_style: MarkerStyle,
    /// Placed first, in the given order.
    pub special_tokens: Vec<String>,
    /// Adds the 256 `<0xNN>` tokens after the specials.
    pub byte_fallback: bool,
    pub ideographic: bool,
}

impl TrainConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            marker_style: MarkerStyle::default(),
            special_tokens: vec!["<unk>".into(), "<s>".into(), "</s>".into()],
            byte_fallback: false,
            ideographic: false,
        }
    }
}

fn count_units<S: AsRef<str> + Sync>(lines: &[S]) -> HashMap<(String, bool), u64> {
    lines
        .par_iter()
        .fold(HashMap::new, |mut acc: HashMap<(String, bool), u64>, line| {
            for (unit, initial) in pretokenize(line.as_ref()) {
                *acc.entry((unit.to_owned(), initial)).or_default() += 1;
            }
            acc
        })
        .reduce(HashMap::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_default() += v;
            }
            a
        })
}

#[derive(PartialEq, Eq, PartialOrd, Ord)]
struct Candidate {
    count: u64,
    // smaller surfaces win ties
    surfaces: Reverse<(String, String)>,
    pair: (TokenId, TokenId),
}

/// Greedy BPE training. The most frequent adjacent pair is merged first;
/// ties go to the lexicographically smallest `(left, right)` surfaces.
/// Training stops at `vocab_size` or once no pair occurs at least twice.
pub fn bpe_train<I, S>(corpus: I, config: &TrainConfig) -> Result<(Vocab, MergeRules), WordizerError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str> + Send + Sync,
{
    let lines: Vec<S> = corpus.into_iter().collect();
    let unit_counts = count_units(&lines);
    if unit_counts.is_empty() {
        return Err(WordizerError::EmptyCorpus);
    }
    let style = &config.marker_style;

    let mut units: Vec<((String, bool), u64)> = unit_counts.into_iter().collect();
    units.sort_unstable();

    let mut alphabet = BTreeSet::new();
    for ((unit, initial), _) in &units {
        for (k, c) in unit.chars().enumerate() {
            alphabet.insert(base_symbol(style, c, k, *initial));
        }
    }

    let mut tokens: Vec<String> = config.special_tokens.clone();
    if config.byte_fallback {
        tokens.extend((0..=255u8).map(|b| format!("<0x{b:02X}>")));
    }
    tokens.extend(alphabet.iter().filter(|s| !config.special_tokens.contains(s)).cloned());
    let alphabet_size = tokens.len();
    if config.vocab_size <= alphabet_size {
        return Err(WordizerError::VocabTooSmall {
            requested: config.vocab_size,
            alphabet: alphabet_size,
        });
    }
    let mut index: HashMap<String, TokenId> = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as TokenId))
        .collect();

    let mut words: Vec<Vec<TokenId>> = Vec::with_capacity(units.len());
    let mut freqs: Vec<u64> = Vec::with_capacity(units.len());
    for ((unit, initial), n) in &units {
        words.push(
            unit.chars()
                .enumerate()
                .map(|(k, c)| index[&base_symbol(style, c, k, *initial)])
                .collect(),
        );
        freqs.push(*n);
    }

    let mut pair_counts: HashMap<(TokenId, TokenId), u64> = HashMap::new();
    let mut occurs: HashMap<(TokenId, TokenId), HashSet<usize>> = HashMap::new();
    for (w, word) in words.iter().enumerate() {
        for p in word.windows(2) {
            let key = (p[0], p[1]);
            *pair_counts.entry(key).or_default() += freqs[w];
            occurs.entry(key).or_default().insert(w);
        }
    }
    let candidate = |pair: (TokenId, TokenId), count: u64, tokens: &[String]| Candidate {
        count,
        surfaces: Reverse((tokens[pair.0 as usize].clone(), tokens[pair.1 as usize].clone())),
        pair,
    };
    let mut heap: BinaryHeap<Candidate> = pair_counts
        .iter()
        .map(|(&pair, &count)| candidate(pair, count, &tokens))
        .collect();

    let mut merges = Vec::new();
    while tokens.len() < config.vocab_size {
        let Some(top) = heap.pop() else { break };
        let current = pair_counts.get(&top.pair).copied().unwrap_or(0);
        if current != top.count {
            // Decreased counts are re-queued; increased ones were pushed fresh.
            if current > 0 && current < top.count {
                heap.push(candidate(top.pair, current, &tokens));
            }
            continue;
        }
        if current < 2 {
            break;
        }
        let (a, b) = top.pair;
        let Reverse((left, right)) = top.surfaces;
        let surface = merged_surface(style, &left, &right);
        let new_id = *index.entry(surface.clone()).or_insert_with(|| {
            tokens.push(surface);
            (tokens.len() - 1) as TokenId
        });
        merges.push((left, right));

        let affected: Vec<usize> = occurs.remove(&top.pair).into_iter().flatten().collect();
        let mut grown = HashSet::new();
        for w in affected {
            let old = &words[w];
            if !old.windows(2).any(|p| p[0] == a && p[1] == b) {
                continue;
            }
            let mut merged = Vec::with_capacity(old.len());
            let mut k = 0;
            while k < old.len() {
                if k + 1 < old.len() && old[k] == a && old[k + 1] == b {
                    merged.push(new_id);
                    k += 2;
                } else {
                    merged.push(old[k]);
                    k += 1;
                }
            }
            let f = freqs[w];
            for p in old.windows(2) {
                let key = (p[0], p[1]);
                let c = pair_counts.get_mut(&key).expect("pair was counted");
                *c -= f;
                if *c == 0 {
                    pair_counts.remove(&key);
                }
            }
            for p in merged.windows(2) {
                let key = (p[0], p[1]);
                *pair_counts.entry(key).or_default() += f;
                occurs.entry(key).or_default().insert(w);
                grown.insert(key);
            }
            words[w] = merged;
        }
        let mut grown: Vec<_> = grown.into_iter().collect();
        grown.sort_unstable();
        for pair in grown {
            if let Some(&count) = pair_counts.get(&pair) {
                heap.push(candidate(pair, count, &tokens));
            }
        }
    }

    let specials = 0..config.special_tokens.len() as TokenId;
    let vocab = Vocab::new(tokens, style.clone(), specials, config.ideographic)?;
    Ok((vocab, MergeRules::new(merges)))
}
