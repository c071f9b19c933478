#![allow(dead_code)]

pub mod oracle;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transtok::pipeline::TokenizerPaths;
use transtok::tensors::{Dtype, EmbeddingTable};
use transtok::wordizer::{MarkerStyle, MergeRules, Tokenizer, Vocab};

/// Builds a tokenizer whose merges assemble exactly the given pieces,
/// left to right, earlier pieces first. Every base character of every
/// piece is in the vocabulary, as are the intermediate prefixes.
pub fn chain_tokenizer(pieces: &[&str], marker: &str) -> Tokenizer {
    let mut tokens: Vec<String> = vec!["<unk>".into()];
    let mut seen: BTreeSet<String> = tokens.iter().cloned().collect();
    let mut merges = Vec::new();
    let mut push = |t: String, tokens: &mut Vec<String>| {
        if seen.insert(t.clone()) {
            tokens.push(t);
        }
    };
    for piece in pieces {
        let (marked, body) = match piece.strip_prefix(marker) {
            Some(rest) => (true, rest),
            None => (false, *piece),
        };
        let mut symbols: Vec<String> = body.chars().map(String::from).collect();
        if marked {
            symbols[0] = format!("{marker}{}", symbols[0]);
        }
        for s in &symbols {
            push(s.clone(), &mut tokens);
        }
        let mut acc = symbols[0].clone();
        for s in &symbols[1..] {
            merges.push((acc.clone(), s.clone()));
            acc.push_str(s);
            push(acc.clone(), &mut tokens);
        }
    }
    let vocab = Vocab::new(tokens, MarkerStyle::WordStartPrefix(marker.into()), [0], false).unwrap();
    Tokenizer::new(vocab, MergeRules::new(merges)).unwrap()
}

pub fn save_tokenizer(tok: &Tokenizer, dir: &Path, name: &str) -> TokenizerPaths {
    let paths = TokenizerPaths {
        vocab: dir.join(format!("{name}.vocab.json")),
        merges: dir.join(format!("{name}.merges.txt")),
    };
    tok.vocab().save(&paths.vocab).unwrap();
    tok.merges().save(&paths.merges).unwrap();
    paths
}

pub struct Fixture {
    pub corpus: PathBuf,
    pub source: TokenizerPaths,
    pub target: TokenizerPaths,
    pub source_tok: Tokenizer,
    pub target_tok: Tokenizer,
}

/// English to Dutch miniature where "fifteen", "15" and "Fifteen" all
/// translate to "vijftien" with counts 13721, 12293 and 544.
pub fn golden_fixture(dir: &Path) -> Fixture {
    let source_tok = chain_tokenizer(&["_fifteen", "_15", "_Fif", "teen"], "_");
    let target_tok = chain_tokenizer(&["_vijftien"], "_");
    let mut text = String::new();
    for (src, n) in [("fifteen", 13721), ("15", 12293), ("Fifteen", 544)] {
        for _ in 0..n {
            writeln!(text, "{src} ||| vijftien").unwrap();
        }
    }
    let corpus = dir.join("golden.txt");
    std::fs::write(&corpus, text).unwrap();
    Fixture {
        source: save_tokenizer(&source_tok, dir, "en"),
        target: save_tokenizer(&target_tok, dir, "nl"),
        corpus,
        source_tok,
        target_tok,
    }
}

/// Random sentences over a closed word list, so a tokenizer trained on the
/// list keeps every word as one token.
pub fn random_sentences(words: &[String], count: usize, max_len: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let len = rng.gen_range(1..=max_len);
            (0..len).map(|_| words[rng.gen_range(0..words.len())].as_str()).collect::<Vec<_>>().join(" ")
        })
        .collect()
}

/// Pronounceable pseudo-words, distinct and letter-only.
pub fn pseudo_words(n: usize, seed: u64) -> Vec<String> {
    const SYL: [&str; 16] = ["ka", "lo", "mi", "ne", "ru", "sa", "to", "vi", "be", "do", "fu", "ga", "hi", "jo", "pe", "zu"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BTreeSet::new();
    while out.len() < n {
        let k = rng.gen_range(2..=3);
        out.insert((0..k).map(|_| SYL[rng.gen_range(0..SYL.len())]).collect::<String>());
    }
    let mut v: Vec<String> = out.into_iter().collect();
    // shuffle deterministically so frequency rank is not alphabetical
    for i in (1..v.len()).rev() {
        v.swap(i, rng.gen_range(0..=i));
    }
    v
}

pub fn random_table(name: &str, rows: usize, cols: usize, seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f32> = (0..rows * cols).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    EmbeddingTable::from_f32(name, Dtype::F32, rows, cols, &values).unwrap()
}

pub fn sha256_file(path: &Path) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
}

/// Writes a synthetic translation corpus: each source word has one fixed
/// target word, sentences are 3 to 12 words long and adjacent target words
/// are swapped now and then.
pub fn synthetic_parallel(path: &Path, pairs: usize, types: usize, seed: u64) -> (Vec<String>, Vec<String>) {
    let src_words = pseudo_words(types, seed);
    let tgt_words: Vec<String> = pseudo_words(types, seed ^ 0x5eed)
        .into_iter()
        .map(|w| w.replace('a', "aa").replace('o', "oe"))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut text = String::with_capacity(pairs * 80);
    let (mut src_lines, mut tgt_lines) = (Vec::new(), Vec::new());
    for _ in 0..pairs {
        let len = rng.gen_range(3..=12);
        // squared uniform skews toward frequent words
        let idx: Vec<usize> = (0..len)
            .map(|_| {
                let u: f64 = rng.gen();
                ((u * u) * types as f64) as usize
            })
            .collect();
        let src: Vec<&str> = idx.iter().map(|&k| src_words[k].as_str()).collect();
        let mut tgt: Vec<&str> = idx.iter().map(|&k| tgt_words[k].as_str()).collect();
        if len > 3 && rng.gen_bool(0.3) {
            let k = rng.gen_range(0..len - 1);
            tgt.swap(k, k + 1);
        }
        let (s, t) = (src.join(" "), tgt.join(" "));
        writeln!(text, "{s} ||| {t}").unwrap();
        src_lines.push(s);
        tgt_lines.push(t);
    }
    std::fs::write(path, text).unwrap();
    (src_lines, tgt_lines)
}

/// Trains a tokenizer on `lines` and saves it under `dir`.
pub fn trained_tokenizer(lines: &[String], vocab_size: usize, dir: &Path, name: &str) -> (Tokenizer, TokenizerPaths) {
    let (vocab, merges) = transtok::wordizer::bpe_train(lines, &transtok::wordizer::TrainConfig::new(vocab_size)).unwrap();
    let tok = Tokenizer::new(vocab, merges).unwrap();
    let paths = save_tokenizer(&tok, dir, name);
    (tok, paths)
}

/// Peak resident set size of this process in bytes, when the kernel
/// reports it.
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}
