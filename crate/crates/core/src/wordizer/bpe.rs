use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{is_letter, MarkerStyle, TokenId, Vocab, WordSequence, WordizerError};

/// Ordered merge list; earlier entries have higher priority.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MergeRules {
    pub pairs: Vec<(String, String)>,
}

impl MergeRules {
    pub fn new(pairs: Vec<(String, String)>) -> Self {
        Self { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Parses `left right` lines. A leading `#version` line is ignored.
    pub fn parse(text: &str) -> Result<Self, WordizerError> {
        let mut pairs = Vec::new();
        for (k, line) in text.lines().enumerate() {
            if (k == 0 && line.starts_with("#version")) || line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    pairs.push((l.to_owned(), r.to_owned()))
                }
                _ => {
                    return Err(WordizerError::InvalidMerge {
                        line: k + 1,
                        message: format!("expected `left right`, got {line:?}"),
                    })
                }
            }
        }
        Ok(Self { pairs })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (l, r) in &self.pairs {
            out.push_str(l);
            out.push(' ');
            out.push_str(r);
            out.push('\n');
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, WordizerError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| WordizerError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), WordizerError> {
        let path = path.as_ref();
        crate::util::write_atomic(path, self.to_text().as_bytes()).map_err(|source| {
            WordizerError::Io {
                path: path.to_owned(),
                source,
            }
        })
    }
}

/// Surface produced by merging `left` and `right` under `style`.
pub(crate) fn merged_surface(style: &MarkerStyle, left: &str, right: &str) -> String {
    match style {
        MarkerStyle::WordStartPrefix(_) => format!("{left}{right}"),
        MarkerStyle::ContinuationPrefix(m) => {
            format!("{left}{}", right.strip_prefix(m.as_str()).unwrap_or(right))
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum CharClass {
    Letter,
    Number,
    Other,
}

fn char_class(c: char) -> CharClass {
    use unicode_general_category::get_general_category;
    if is_letter(c) {
        return CharClass::Letter;
    }
    match get_general_category(c).abbreviation().as_bytes()[0] {
        b'M' => CharClass::Letter,
        b'N' => CharClass::Number,
        _ => CharClass::Other,
    }
}

/// Splits text into BPE units: whitespace-separated words, further split
/// at letter/number/other class changes. Yields `(unit, word_initial)`.
pub(crate) fn pretokenize(text: &str) -> impl Iterator<Item = (&str, bool)> {
    text.split_whitespace().flat_map(|word| {
        let mut units = Vec::new();
        let mut start = 0;
        let mut prev: Option<CharClass> = None;
        for (pos, c) in word.char_indices() {
            let class = char_class(c);
            if prev.is_some_and(|p| p != class) {
                units.push((&word[start..pos], start == 0));
                start = pos;
            }
            prev = Some(class);
        }
        units.push((&word[start..], start == 0));
        units
    })
}

/// Base symbol for character `c` at position `k` within a unit.
pub(crate) fn base_symbol(style: &MarkerStyle, c: char, k: usize, word_initial: bool) -> String {
    let starts_word = k == 0 && word_initial;
    let mut buf = [0u8; 4];
    style.render(starts_word, c.encode_utf8(&mut buf))
}

#[derive(Clone, Copy)]
enum Sym {
    Known(TokenId),
    Unknown(char, bool),
}

/// A vocabulary paired with its merge rules, ready to encode text.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    vocab: Vocab,
    merges: MergeRules,
    merge_index: HashMap<(TokenId, TokenId), (u32, TokenId)>,
    bare_chars: HashMap<char, TokenId>,
    marked_chars: HashMap<char, TokenId>,
}

impl Tokenizer {
    /// Checks that every merge operand and result exists in `vocab`.
    pub fn new(vocab: Vocab, merges: MergeRules) -> Result<Self, WordizerError> {
        let style = vocab.marker_style().clone();
        let mut merge_index = HashMap::with_capacity(merges.len());
        for (rank, (l, r)) in merges.pairs.iter().enumerate() {
            let lookup = |s: &str| {
                vocab.id(s).ok_or_else(|| WordizerError::InvalidMerge {
                    line: rank + 1,
                    message: format!("{s:?} is not in the vocabulary"),
                })
            };
            let (li, ri) = (lookup(l)?, lookup(r)?);
            let out = lookup(&merged_surface(&style, l, r))?;
            merge_index.entry((li, ri)).or_insert((rank as u32, out));
        }
        let mut bare_chars = HashMap::new();
        let mut marked_chars = HashMap::new();
        for (id, tok) in vocab.tokens().iter().enumerate() {
            if vocab.is_special(id as TokenId) {
                continue;
            }
            let mut chars = tok.chars();
            if let (Some(c), None) = (chars.next(), chars.next()) {
                bare_chars.insert(c, id as TokenId);
            }
            if let Some(rest) = tok.strip_prefix(style.marker()) {
                let mut chars = rest.chars();
                if let (Some(c), None) = (chars.next(), chars.next()) {
                    marked_chars.insert(c, id as TokenId);
                }
            }
        }
        Ok(Self {
            vocab,
            merges,
            merge_index,
            bare_chars,
            marked_chars,
        })
    }

    pub fn load(vocab: impl AsRef<Path>, merges: impl AsRef<Path>) -> Result<Self, WordizerError> {
        Self::new(Vocab::load(vocab)?, MergeRules::load(merges)?)
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn merges(&self) -> &MergeRules {
        &self.merges
    }

    fn symbol_id(&self, c: char, k: usize, word_initial: bool) -> Option<TokenId> {
        let starts_word = k == 0 && word_initial;
        match (self.vocab.marker_style(), starts_word) {
            (MarkerStyle::WordStartPrefix(_), true) | (MarkerStyle::ContinuationPrefix(_), false) => {
                self.marked_chars.get(&c).copied()
            }
            _ => self.bare_chars.get(&c).copied(),
        }
    }

    /// BPE-encodes `text`. The merge with the lowest rank is applied first;
    /// among equal ranks, the leftmost occurrence wins.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>, WordizerError> {
        let mut out = Vec::with_capacity(text.len() / 3);
        let mut syms: Vec<Sym> = Vec::new();
        for (unit, word_initial) in pretokenize(text) {
            syms.clear();
            for (k, c) in unit.chars().enumerate() {
                syms.push(match self.symbol_id(c, k, word_initial) {
                    Some(id) => Sym::Known(id),
                    None => Sym::Unknown(c, k == 0 && word_initial),
                });
            }
            self.apply_merges(&mut syms);
            for sym in &syms {
                match *sym {
                    Sym::Known(id) => out.push(id),
                    Sym::Unknown(c, starts_word) => self.fallback(c, starts_word, &mut out)?,
                }
            }
        }
        Ok(out)
    }

    fn apply_merges(&self, syms: &mut Vec<Sym>) {
        loop {
            let mut best: Option<(u32, usize, TokenId)> = None;
            for (pos, w) in syms.windows(2).enumerate() {
                if let [Sym::Known(a), Sym::Known(b)] = *w {
                    if let Some(&(rank, out)) = self.merge_index.get(&(a, b)) {
                        if best.is_none_or(|(r, _, _)| rank < r) {
                            best = Some((rank, pos, out));
                        }
                    }
                }
            }
            match best {
                Some((_, pos, out)) => {
                    syms[pos] = Sym::Known(out);
                    syms.remove(pos + 1);
                }
                None => return,
            }
        }
    }

    fn fallback(&self, c: char, starts_word: bool, out: &mut Vec<TokenId>) -> Result<(), WordizerError> {
        let style = self.vocab.marker_style();
        let symbol = || WordizerError::UnknownSymbol {
            symbol: base_symbol(style, c, 0, starts_word),
        };
        if !self.vocab.has_byte_fallback() {
            return Err(symbol());
        }
        if starts_word {
            if let MarkerStyle::WordStartPrefix(m) = style {
                if let Some(id) = self.vocab.id(m) {
                    out.push(id);
                }
            }
        }
        let mut buf = [0u8; 4];
        for &b in c.encode_utf8(&mut buf).as_bytes() {
            out.push(self.vocab.byte_token(b).ok_or_else(symbol)?);
        }
        Ok(())
    }

    /// Encodes and re-merges into word units in one step.
    pub fn encode_words(&self, text: &str) -> Result<WordSequence, WordizerError> {
        let ids = self.encode(text)?;
        super::remerge_words(&ids, &self.vocab)
    }

    /// Space-separated surfaces, the pre-tokenized interchange layout.
    pub fn format_surfaces(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| self.vocab.token(id).unwrap_or("<invalid>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Parses a pre-tokenized line of space-separated surfaces.
    pub fn parse_surfaces(vocab: &Vocab, line: &str) -> Result<Vec<TokenId>, WordizerError> {
        line.split_whitespace()
            .map(|s| {
                vocab.id(s).ok_or_else(|| WordizerError::UnknownSymbol { symbol: s.to_owned() })
            })
            .collect()
    }
}
