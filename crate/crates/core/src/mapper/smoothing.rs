use std::collections::{BTreeSet, HashMap};

use serde::Serialize;

use super::{MapError, WordPairCounts};
use crate::wordizer::{byte_token_value, TokenId, Vocab};

/// Canonical role of a special token, recognized from common spellings.
pub fn special_role(surface: &str) -> Option<&'static str> {
    let role = match surface {
        "<unk>" | "[UNK]" | "<|unk|>" => "unk",
        "<s>" | "<bos>" | "<|begin_of_text|>" | "<|startoftext|>" => "bos",
        "</s>" | "<eos>" | "<|end_of_text|>" | "<|endoftext|>" => "eos",
        "<pad>" | "[PAD]" | "<|pad|>" => "pad",
        "[CLS]" | "<cls>" => "cls",
        "[SEP]" | "<sep>" => "sep",
        "[MASK]" | "<mask>" => "mask",
        _ => return None,
    };
    Some(role)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SmoothingReport {
    pub identical: usize,
    pub special: usize,
    pub user: usize,
    /// Target special tokens left without a counterpart.
    pub unmatched_specials: Vec<String>,
}

impl SmoothingReport {
    pub fn total_pairs(&self) -> usize {
        self.identical + self.special + self.user
    }
}

fn check(vocab: &Vocab, id: TokenId, side: &'static str) -> Result<(), MapError> {
    if (id as usize) < vocab.len() {
        Ok(())
    } else {
        Err(MapError::InvalidToken {
            side,
            id,
            size: vocab.len(),
        })
    }
}

/// Adds one to the count of every predefined `(source token, target token)`
/// pair: tokens with the same surface after marker normalization, special
/// tokens with the same role, and `extra` pairs. Each pair is added once
/// even when several rules select it.
pub fn add_smoothing(
    mut counts: WordPairCounts,
    source: &Vocab,
    target: &Vocab,
    extra: &[(TokenId, TokenId)],
    identical: bool,
    specials: bool,
) -> Result<(WordPairCounts, SmoothingReport), MapError> {
    for &(s, t) in extra {
        check(source, s, "source")?;
        check(target, t, "target")?;
    }
    let mut report = SmoothingReport::default();
    let mut pairs: BTreeSet<(TokenId, TokenId)> = BTreeSet::new();

    if identical {
        let mut by_form: HashMap<(bool, &str), TokenId> = HashMap::new();
        for (id, tok) in source.tokens().iter().enumerate() {
            if source.is_special(id as TokenId) {
                continue;
            }
            let form = match byte_token_value(tok) {
                Some(_) => (false, tok.as_str()),
                None => source.marker_style().normalize(tok),
            };
            by_form.entry(form).or_insert(id as TokenId);
        }
        for (id, tok) in target.tokens().iter().enumerate() {
            if target.is_special(id as TokenId) {
                continue;
            }
            let form = match byte_token_value(tok) {
                Some(_) => (false, tok.as_str()),
                None => target.marker_style().normalize(tok),
            };
            if let Some(&s) = by_form.get(&form) {
                if pairs.insert((s, id as TokenId)) {
                    report.identical += 1;
                }
            }
        }
    }

    let user_targets: BTreeSet<TokenId> = extra.iter().map(|p| p.1).collect();
    if specials {
        let source_roles: HashMap<&str, TokenId> = source
            .special_tokens()
            .iter()
            .filter_map(|&id| Some((special_role(source.token(id)?)?, id)))
            .collect();
        for &t in target.special_tokens() {
            let surface = target.token(t).unwrap_or_default();
            match special_role(surface).and_then(|r| source_roles.get(r)) {
                Some(&s) => {
                    if pairs.insert((s, t)) {
                        report.special += 1;
                    }
                }
                None if !user_targets.contains(&t) => {
                    log::warn!("target special token {surface:?} has no source counterpart");
                    report.unmatched_specials.push(surface.to_owned());
                }
                None => {}
            }
        }
    }

    for &pair in extra {
        if pairs.insert(pair) {
            report.user += 1;
        }
    }
    for (s, t) in pairs {
        counts.add_smoothing(&[s], &[t], 1.0);
    }
    Ok((counts, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wordizer::MarkerStyle;

    fn vocab(tokens: &[&str], style: MarkerStyle, specials: &[u32]) -> Vocab {
        Vocab::new(tokens.iter().map(|s| s.to_string()).collect(), style, specials.iter().copied(), false).unwrap()
    }

    #[test]
    fn identical_digits_are_smoothed() {
        let src = vocab(&["_x", "7"], MarkerStyle::WordStartPrefix("_".into()), &[]);
        let tgt = vocab(&["7", "_y"], MarkerStyle::WordStartPrefix("_".into()), &[]);
        let (counts, report) = add_smoothing(WordPairCounts::new(), &src, &tgt, &[], true, true).unwrap();
        assert_eq!(report.identical, 1);
        let c = counts.get(&[1], &[0]).unwrap();
        assert_eq!((c.evidence, c.smoothing, c.total()), (0.0, 1.0, 1.0));
    }

    #[test]
    fn plus_one_on_existing_count() {
        let src = vocab(&["_a"], MarkerStyle::WordStartPrefix("_".into()), &[]);
        let tgt = vocab(&["_a"], MarkerStyle::WordStartPrefix("_".into()), &[]);
        let mut counts = WordPairCounts::new();
        counts.add_evidence(&[0], &[0], 46.0);
        // selected by both the identity rule and the user list: still +1
        let (counts, report) = add_smoothing(counts, &src, &tgt, &[(0, 0)], true, true).unwrap();
        assert_eq!(counts.get(&[0], &[0]).unwrap().total(), 47.0);
        assert_eq!(report.total_pairs(), 1);
    }

    #[test]
    fn identity_across_marker_styles() {
        let src = vocab(&["\u{2581}fifteen", "teen"], MarkerStyle::default(), &[]);
        let tgt = vocab(&["fifteen", "##teen", "teen"], MarkerStyle::ContinuationPrefix("##".into()), &[]);
        let (counts, _) = add_smoothing(WordPairCounts::new(), &src, &tgt, &[], true, false).unwrap();
        assert!(counts.get(&[0], &[0]).is_some());
        assert!(counts.get(&[1], &[1]).is_some());
        // word-initial "teen" differs from the continuation piece
        assert!(counts.get(&[1], &[2]).is_none());
    }

    #[test]
    fn special_roles_pair_up_with_empty_corpus() {
        let src = vocab(&["<s>", "[CLS]", "_a"], MarkerStyle::WordStartPrefix("_".into()), &[0, 1]);
        let tgt = vocab(&["<cls>", "<bos>", "<pad>", "_b"], MarkerStyle::WordStartPrefix("_".into()), &[0, 1, 2]);
        let (counts, report) = add_smoothing(WordPairCounts::new(), &src, &tgt, &[], true, true).unwrap();
        assert_eq!(counts.get(&[1], &[0]).unwrap().total(), 1.0);
        assert_eq!(counts.get(&[0], &[1]).unwrap().total(), 1.0);
        assert_eq!(report.special, 2);
        assert_eq!(report.unmatched_specials, vec!["<pad>".to_string()]);
        let (_, report) = add_smoothing(WordPairCounts::new(), &src, &tgt, &[(2, 2)], true, true).unwrap();
        assert!(report.unmatched_specials.is_empty());
    }

    #[test]
    fn invalid_extra_pair() {
        let v = vocab(&["a"], MarkerStyle::default(), &[]);
        assert!(matches!(
            add_smoothing(WordPairCounts::new(), &v, &v, &[(0, 3)], true, true),
            Err(MapError::InvalidToken { side: "target", .. })
        ));
    }
}
