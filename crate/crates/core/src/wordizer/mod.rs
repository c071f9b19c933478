//! Tokenizer vocabularies, BPE encoding and training, and re-merging of
//! subword token streams into word units.

mod bpe;
mod train;
mod words;

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use unicode_general_category::get_general_category;

pub use bpe::{MergeRules, Tokenizer};
pub use train::{bpe_train, TrainConfig};
pub use words::{remerge_words, WordSequence, WordUnit};

pub type TokenId = u32;

/// Default word-start marker (the SentencePiece convention).
pub const DEFAULT_WORD_START: &str = "\u{2581}";
/// Default continuation marker (the WordPiece convention).
pub const DEFAULT_CONTINUATION: &str = "##";

#[derive(Debug, Error)]
pub enum WordizerError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed vocabulary file {path}: {source}")]
    VocabJson {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),
    #[error("merges line {line}: {message}")]
    InvalidMerge { line: usize, message: String },
    #[error("cannot encode symbol {symbol:?}: not in vocabulary and no byte fallback")]
    UnknownSymbol { symbol: String },
    #[error("token id {id} out of range for vocabulary of size {size}")]
    InvalidId { id: TokenId, size: usize },
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("vocab size {requested} must exceed the base alphabet size {alphabet}")]
    VocabTooSmall { requested: usize, alphabet: usize },
}

/// How a vocabulary marks word boundaries on its surfaces.
///
/// `WordStartPrefix("▁")` marks the first piece of a word (`▁token`);
/// `ContinuationPrefix("##")` marks every non-initial piece (`##izer`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerStyle {
    WordStartPrefix(String),
    ContinuationPrefix(String),
}

impl Default for MarkerStyle {
    fn default() -> Self {
        MarkerStyle::WordStartPrefix(DEFAULT_WORD_START.to_owned())
    }
}

impl MarkerStyle {
    pub fn marker(&self) -> &str {
        match self {
            MarkerStyle::WordStartPrefix(m) | MarkerStyle::ContinuationPrefix(m) => m,
        }
    }

    /// Splits a surface into `(starts_word, bare form)`.
    pub fn normalize<'a>(&self, surface: &'a str) -> (bool, &'a str) {
        match self {
            MarkerStyle::WordStartPrefix(m) => match surface.strip_prefix(m.as_str()) {
                Some(rest) => (true, rest),
                None => (false, surface),
            },
            MarkerStyle::ContinuationPrefix(m) => match surface.strip_prefix(m.as_str()) {
                Some(rest) => (false, rest),
                None => (true, surface),
            },
        }
    }

    /// Inverse of [`MarkerStyle::normalize`].
    pub fn render(&self, starts_word: bool, bare: &str) -> String {
        match (self, starts_word) {
            (MarkerStyle::WordStartPrefix(m), true) => format!("{m}{bare}"),
            (MarkerStyle::ContinuationPrefix(m), false) => format!("{m}{bare}"),
            _ => bare.to_owned(),
        }
    }
}

/// True if `c` belongs to the Unicode general category Letter (`\p{L}`).
pub fn is_letter(c: char) -> bool {
    get_general_category(c).abbreviation().starts_with('L')
}

pub fn contains_letter(s: &str) -> bool {
    s.chars().any(is_letter)
}

/// Parses byte-fallback surfaces of the form `<0xNN>`.
pub fn byte_token_value(surface: &str) -> Option<u8> {
    let hex = surface.strip_prefix("<0x")?.strip_suffix('>')?;
    if hex.len() != 2 {
        return None;
    }
    u8::from_str_radix(hex, 16).ok()
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
    marker_style: MarkerStyle,
    #[serde(default)]
    special_tokens: Vec<TokenId>,
    #[serde(default)]
    ideographic: bool,
}

/// Bidirectional token table with marker convention and special tokens.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    marker_style: MarkerStyle,
    special: BTreeSet<TokenId>,
    ideographic: bool,
    has_letter: Vec<bool>,
    byte_ids: Option<Box<[TokenId; 256]>>,
}

impl PartialEq for Vocab {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
            && self.marker_style == other.marker_style
            && self.special == other.special
            && self.ideographic == other.ideographic
    }
}

impl Vocab {
    pub fn new(
        tokens: Vec<String>,
        marker_style: MarkerStyle,
        special_tokens: impl IntoIterator<Item = TokenId>,
        ideographic: bool,
    ) -> Result<Self, WordizerError> {
        if marker_style.marker().is_empty() {
            return Err(WordizerError::InvalidVocab("empty marker string".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(WordizerError::InvalidVocab(format!(
                    "token {id} ({tok:?}) is empty or contains whitespace"
                )));
            }
            if index.insert(tok.clone(), id as TokenId).is_some() {
                return Err(WordizerError::InvalidVocab(format!("duplicate token {tok:?}")));
            }
        }
        let special: BTreeSet<TokenId> = special_tokens.into_iter().collect();
        if let Some(&bad) = special.iter().find(|&&id| id as usize >= tokens.len()) {
            return Err(WordizerError::InvalidVocab(format!(
                "special token id {bad} out of range"
            )));
        }
        let has_letter = tokens
            .iter()
            .map(|t| byte_token_value(t).is_none() && contains_letter(t))
            .collect();
        let mut byte_ids = [TokenId::MAX; 256];
        for (id, tok) in tokens.iter().enumerate() {
            if let Some(b) = byte_token_value(tok) {
                byte_ids[b as usize] = id as TokenId;
            }
        }
        let byte_ids = byte_ids
            .iter()
            .all(|&id| id != TokenId::MAX)
            .then(|| Box::new(byte_ids));
        Ok(Self {
            tokens,
            index,
            marker_style,
            special,
            ideographic,
            has_letter,
            byte_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn marker_style(&self) -> &MarkerStyle {
        &self.marker_style
    }

    pub fn special_tokens(&self) -> &BTreeSet<TokenId> {
        &self.special
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        self.special.contains(&id)
    }

    pub fn ideographic(&self) -> bool {
        self.ideographic
    }

    pub fn set_ideographic(&mut self, on: bool) {
        self.ideographic = on;
    }

    /// Whether the token's surface contains a Letter. Byte-fallback and
    /// special tokens never count as lettered.
    pub fn has_letter(&self, id: TokenId) -> bool {
        self.has_letter[id as usize] && !self.special.contains(&id)
    }

    /// Whether the surface marks the start of a word under the marker style.
    pub fn starts_word(&self, id: TokenId) -> bool {
        self.marker_style.normalize(&self.tokens[id as usize]).0
    }

    pub fn byte_token(&self, byte: u8) -> Option<TokenId> {
        self.byte_ids.as_ref().map(|ids| ids[byte as usize])
    }

    pub fn has_byte_fallback(&self) -> bool {
        self.byte_ids.is_some()
    }

    pub fn check_id(&self, id: TokenId) -> Result<(), WordizerError> {
        if (id as usize) < self.tokens.len() {
            Ok(())
        } else {
            Err(WordizerError::InvalidId {
                id,
                size: self.tokens.len(),
            })
        }
    }

    /// Re-expresses the vocabulary in another marker style. Special and
    /// byte-fallback tokens keep their surfaces.
    pub fn convert_marker_style(&self, style: MarkerStyle) -> Result<Vocab, WordizerError> {
        let tokens = self
            .tokens
            .iter()
            .enumerate()
            .map(|(id, tok)| {
                if self.special.contains(&(id as TokenId)) || byte_token_value(tok).is_some() {
                    tok.clone()
                } else {
                    let (start, bare) = self.marker_style.normalize(tok);
                    style.render(start, bare)
                }
            })
            .collect();
        Vocab::new(tokens, style, self.special.iter().copied(), self.ideographic)
    }

    pub fn to_json(&self) -> String {
        let file = VocabFile {
            tokens: self.tokens.clone(),
            marker_style: self.marker_style.clone(),
            special_tokens: self.special.iter().copied().collect(),
            ideographic: self.ideographic,
        };
        serde_json::to_string(&file).expect("vocab serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let file: VocabFile = serde_json::from_str(text)?;
        Vocab::new(file.tokens, file.marker_style, file.special_tokens, file.ideographic)
            .map_err(serde::de::Error::custom)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, WordizerError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| WordizerError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_json(&text).map_err(|source| WordizerError::VocabJson {
            path: path.to_owned(),
            source,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), WordizerError> {
        let path = path.as_ref();
        crate::util::write_atomic(path, self.to_json().as_bytes()).map_err(|source| {
            WordizerError::Io {
                path: path.to_owned(),
                source,
            }
        })
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    /// Joins token surfaces into a word key, e.g. `"▁Fif teen"`.
    pub fn word_key(&self, ids: &[TokenId]) -> String {
        let mut key = String::new();
        for (k, &id) in ids.iter().enumerate() {
            if k > 0 {
                key.push(WORD_KEY_SEPARATOR);
            }
            key.push_str(&self.tokens[id as usize]);
        }
        key
    }

    /// Inverse of [`Vocab::word_key`].
    pub fn parse_word_key(&self, key: &str) -> Result<Vec<TokenId>, WordizerError> {
        key.split(WORD_KEY_SEPARATOR)
            .map(|s| {
                self.id(s).ok_or_else(|| WordizerError::UnknownSymbol {
                    symbol: s.to_owned(),
                })
            })
            .collect()
    }
}

/// Separator between token surfaces in a word key. Token surfaces never
/// contain whitespace, so a space is unambiguous.
pub const WORD_KEY_SEPARATOR: char = ' ';
