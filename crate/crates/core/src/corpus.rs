//! Streaming reader and filters for Moses-style parallel corpora.
//!
//! Each line holds one sentence pair, source and target separated by the
//! exact five-byte string `" ||| "`. Lines with zero or several separators,
//! or with an empty side after trimming, are skipped and counted rather
//! than treated as fatal.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Column separator between the two sides of a pair.
pub const SEPARATOR: &str = " ||| ";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line_no}: invalid UTF-8 at byte {valid_up_to}")]
    Utf8 { line_no: usize, valid_up_to: usize },
    #[error("invalid filter bounds: {0}")]
    InvalidFilter(String),
}

/// One aligned sentence pair. `line_no` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub source_text: String,
    pub target_text: String,
    pub line_no: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub pair_count: u64,
    pub source_token_total: u64,
    pub target_token_total: u64,
}

impl CorpusStats {
    pub fn record(&mut self, source_tokens: usize, target_tokens: usize) {
        self.pair_count += 1;
        self.source_token_total += source_tokens as u64;
        self.target_token_total += target_tokens as u64;
    }
}

/// Splits a single line into a pair, or `None` if the line is malformed.
pub fn parse_line(line: &str, line_no: usize) -> Option<SentencePair> {
    let line = line.trim_end_matches(['\n', '\r']);
    if line.matches(SEPARATOR).count() != 1 {
        return None;
    }
    let (src, tgt) = line.split_once(SEPARATOR)?;
    let (src, tgt) = (src.trim(), tgt.trim());
    if src.is_empty() || tgt.is_empty() {
        return None;
    }
    Some(SentencePair {
        source_text: src.to_owned(),
        target_text: tgt.to_owned(),
        line_no,
    })
}

/// Streaming pair reader over any buffered byte source.
///
/// A single line buffer is reused across reads, so memory stays bounded
/// by the longest line regardless of corpus length.
pub struct PairReader<R> {
    inner: R,
    buf: Vec<u8>,
    lines_read: usize,
    skipped: usize,
    yielded: usize,
    max_pairs: Option<usize>,
    path: PathBuf,
    done: bool,
}

impl<R: BufRead> PairReader<R> {
    pub fn new(inner: R, max_pairs: Option<usize>) -> Self {
        Self {
            inner,
            buf: Vec::with_capacity(256),
            lines_read: 0,
            skipped: 0,
            yielded: 0,
            max_pairs,
            path: PathBuf::from("<stream>"),
            done: false,
        }
    }

    pub fn lines_read(&self) -> usize {
        self.lines_read
    }

    /// Lines dropped for a wrong separator count or an empty side.
    pub fn skipped(&self) -> usize {
        self.skipped
    }
}

impl<R: BufRead> Iterator for PairReader<R> {
    type Item = Result<SentencePair, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if self.done || self.max_pairs.is_some_and(|m| self.yielded >= m) {
                return None;
            }
            self.buf.clear();
            match self.inner.read_until(b'\n', &mut self.buf) {
                Ok(0) => {
                    self.done = true;
                    return None;
                }
                Ok(_) => {}
                Err(source) => {
                    self.done = true;
                    return Some(Err(CorpusError::Io {
                        path: self.path.clone(),
                        source,
                    }));
                }
            }
            self.lines_read += 1;
            let line = match std::str::from_utf8(&self.buf) {
                Ok(s) => s,
                Err(e) => {
                    self.done = true;
                    return Some(Err(CorpusError::Utf8 {
                        line_no: self.lines_read,
                        valid_up_to: e.valid_up_to(),
                    }));
                }
            };
            match parse_line(line, self.lines_read) {
                Some(pair) => {
                    self.yielded += 1;
                    return Some(Ok(pair));
                }
                None => self.skipped += 1,
            }
        }
    }
}

/// Opens `path` and streams its pairs in file order.
pub fn read_pairs(
    path: impl AsRef<Path>,
    max_pairs: Option<usize>,
) -> Result<PairReader<BufReader<File>>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut reader = PairReader::new(BufReader::with_capacity(1 << 16, file), max_pairs);
    reader.path = path.to_owned();
    Ok(reader)
}

/// Length bounds applied to both sides of every pair, in characters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub min_chars: usize,
    pub max_chars: usize,
    pub ratio_cap: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_chars: 1,
            max_chars: 4096,
            ratio_cap: 9.0,
        }
    }
}

impl FilterConfig {
    pub fn new(min_chars: usize, max_chars: usize, ratio_cap: f64) -> Result<Self, CorpusError> {
        let cfg = Self {
            min_chars,
            max_chars,
            ratio_cap,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.min_chars > self.max_chars {
            return Err(CorpusError::InvalidFilter(format!(
                "min_chars {} exceeds max_chars {}",
                self.min_chars, self.max_chars
            )));
        }
        if !(self.ratio_cap >= 1.0) {
            return Err(CorpusError::InvalidFilter(format!(
                "ratio cap {} must be at least 1",
                self.ratio_cap
            )));
        }
        Ok(())
    }

    pub fn accepts(&self, pair: &SentencePair) -> bool {
        let a = pair.source_text.chars().count();
        let b = pair.target_text.chars().count();
        let in_range = |n: usize| n >= self.min_chars && n <= self.max_chars;
        if !in_range(a) || !in_range(b) {
            return false;
        }
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        // Pairs always have nonempty sides, but min_chars may be 0.
        lo > 0 && (hi as f64) <= self.ratio_cap * lo as f64
    }
}

/// Lazily drops pairs rejected by `config`; errors pass through untouched.
pub fn filter_pairs<I>(pairs: I, config: FilterConfig) -> impl Iterator<Item = I::Item>
where
    I: IntoIterator<Item = Result<SentencePair, CorpusError>>,
{
    pairs.into_iter().filter(move |item| match item {
        Ok(pair) => config.accepts(pair),
        Err(_) => true,
    })
}
