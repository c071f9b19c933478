use super::{TokenId, Vocab, WordizerError};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WordUnit {
    pub tokens: Vec<TokenId>,
    pub is_letter_word: bool,
}

/// A sentence as a list of word units, each a nonempty run of token ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WordSequence {
    pub words: Vec<WordUnit>,
}

impl WordSequence {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Concatenation of every word's tokens.
    pub fn flatten(&self) -> Vec<TokenId> {
        self.words.iter().flat_map(|w| w.tokens.iter().copied()).collect()
    }

    pub fn token_count(&self) -> usize {
        self.words.iter().map(|w| w.tokens.len()).sum()
    }
}

/// Groups tokens into words.
///
/// A token opens a new word when it carries the word-start marker (or lacks
/// the continuation marker), when it has no Letter character, when the
/// previous token has no Letter character, or when the vocabulary is
/// ideographic. Special tokens behave like non-letter tokens.
pub fn remerge_words(ids: &[TokenId], vocab: &Vocab) -> Result<WordSequence, WordizerError> {
    let mut words: Vec<WordUnit> = Vec::new();
    let mut prev_letter = false;
    for &id in ids {
        vocab.check_id(id)?;
        let letter = vocab.has_letter(id);
        let joins = !words.is_empty()
            && !vocab.ideographic()
            && letter
            && prev_letter
            && !vocab.starts_word(id);
        match words.last_mut() {
            Some(word) if joins => word.tokens.push(id),
            _ => words.push(WordUnit {
                tokens: vec![id],
                is_letter_word: letter,
            }),
        }
        prev_letter = letter;
    }
    Ok(WordSequence { words })
}
