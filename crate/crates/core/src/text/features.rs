use std::collections::HashSet;

use crate::text::snli::{Label, RawExample};
use crate::text::vocab::{Vocab, PAD};

/// Characters kept per word; longer words are truncated, shorter ones padded.
pub const MAX_WORD_CHARS: usize = 16;

/// Id-level features of one sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentenceFeatures {
    pub ids: Vec<usize>,
    /// `ids.len()` rows of exactly [`MAX_WORD_CHARS`] char ids.
    pub chars: Vec<[usize; MAX_WORD_CHARS]>,
    pub pos_ids: Vec<usize>,
    pub exact_match: Vec<bool>,
}

impl SentenceFeatures {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProcessedExample {
    pub premise: SentenceFeatures,
    pub hypothesis: SentenceFeatures,
    pub label: Label,
}

fn lowered(tokens: &[String]) -> HashSet<String> {
    tokens.iter().map(|t| t.to_lowercase()).collect()
}

trait Lookup {
    fn word(&mut self, w: &str) -> usize;
    fn ch(&mut self, c: char) -> usize;
    fn pos(&mut self, p: &str) -> usize;
}

impl Lookup for Vocab {
    fn word(&mut self, w: &str) -> usize {
        self.word_id(w)
    }
    fn ch(&mut self, c: char) -> usize {
        self.char_id(c)
    }
    fn pos(&mut self, p: &str) -> usize {
        self.pos_id(p)
    }
}

struct Frozen<'a>(&'a Vocab);

impl Lookup for Frozen<'_> {
    fn word(&mut self, w: &str) -> usize {
        self.0.words.get(w)
    }
    fn ch(&mut self, c: char) -> usize {
        let mut buf = [0u8; 4];
        self.0.chars.get(c.encode_utf8(&mut buf))
    }
    fn pos(&mut self, p: &str) -> usize {
        self.0.pos.get(p)
    }
}

fn sentence(tokens: &[String], pos: &[String], other: &HashSet<String>, vocab: &mut impl Lookup) -> SentenceFeatures {
    let ids = tokens.iter().map(|t| vocab.word(t)).collect();
    let chars = tokens
        .iter()
        .map(|t| {
            let mut row = [PAD; MAX_WORD_CHARS];
            for (slot, c) in row.iter_mut().zip(t.chars()) {
                *slot = vocab.ch(c);
            }
            row
        })
        .collect();
    let pos_ids = pos.iter().map(|p| vocab.pos(p)).collect();
    let exact_match = tokens.iter().map(|t| other.contains(&t.to_lowercase())).collect();
    SentenceFeatures {
        ids,
        chars,
        pos_ids,
        exact_match,
    }
}

/// Map a raw pair to ids, char rows and exact-match flags. Grows `vocab`
/// unless it is frozen.
pub fn featurize(raw: &RawExample, vocab: &mut Vocab) -> ProcessedExample {
    featurize_with(raw, vocab)
}

/// Featurize against `vocab` without growing it.
pub fn featurize_frozen(raw: &RawExample, vocab: &Vocab) -> ProcessedExample {
    featurize_with(raw, &mut Frozen(vocab))
}

fn featurize_with(raw: &RawExample, vocab: &mut impl Lookup) -> ProcessedExample {
    let prem_set = lowered(&raw.premise_tokens);
    let hyp_set = lowered(&raw.hypothesis_tokens);
    ProcessedExample {
        premise: sentence(&raw.premise_tokens, &raw.premise_pos, &hyp_set, vocab),
        hypothesis: sentence(&raw.hypothesis_tokens, &raw.hypothesis_pos, &prem_set, vocab),
        label: raw.label,
    }
}

/// Featurize a training set (growing the vocabulary) and then freeze it.
pub fn featurize_all(raws: &[RawExample], vocab: &mut Vocab) -> Vec<ProcessedExample> {
    let out = raws.iter().map(|r| featurize(r, vocab)).collect();
    vocab.freeze();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::vocab::UNK;

    fn example(p: &[&str], h: &[&str]) -> RawExample {
        let p: Vec<_> = p.iter().map(|t| (*t, "NN")).collect();
        let h: Vec<_> = h.iter().map(|t| (*t, "NN")).collect();
        RawExample::new(Label::Entailment, &p, &h)
    }

    #[test]
    fn exact_match_is_case_insensitive() {
        let mut v = Vocab::new();
        let ex = featurize(&example(&["A", "dog"], &["The", "dog"]), &mut v);
        assert_eq!(ex.premise.exact_match, [false, true]);
        assert_eq!(ex.hypothesis.exact_match, [false, true]);
        let ex = featurize(&example(&["A", "Dog"], &["a", "cat"]), &mut v);
        assert_eq!(ex.premise.exact_match, [true, false]);
        assert_eq!(ex.hypothesis.exact_match, [true, false]);
    }

    #[test]
    fn char_rows_pad_and_truncate() {
        let mut v = Vocab::new();
        let long = "abcdefghijklmnopqrst";
        let ex = featurize(&example(&["dog", long], &["x"]), &mut v);
        let dog = ex.premise.chars[0];
        assert_eq!(dog[..3], [v.char_id('d'), v.char_id('o'), v.char_id('g')]);
        assert!(dog[3..].iter().all(|&c| c == PAD));
        assert_eq!(dog[3..].len(), 13);
        let row = ex.premise.chars[1];
        let expected: Vec<usize> = long.chars().take(16).map(|c| v.char_id(c)).collect();
        assert_eq!(row.to_vec(), expected);
    }

    #[test]
    fn frozen_vocab_maps_unseen_to_unknown() {
        let mut v = Vocab::new();
        featurize(&example(&["a"], &["b"]), &mut v);
        v.freeze();
        let before = v.clone();
        let ex = featurize(&example(&["zebra"], &["b"]), &mut v);
        assert_eq!(ex.premise.ids, [UNK]);
        assert_eq!(v, before);
    }
}
