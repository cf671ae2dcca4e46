use crate::error::{Error, Result};
use crate::text::features::{ProcessedExample, SentenceFeatures, MAX_WORD_CHARS};
use crate::text::vocab::PAD;

/// One side (premise or hypothesis) of a padded batch. Every array is
/// row-major with `batch` rows of `len` positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SideBatch {
    pub len: usize,
    pub ids: Vec<usize>,
    /// `batch × len × MAX_WORD_CHARS`.
    pub chars: Vec<usize>,
    pub pos_ids: Vec<usize>,
    pub exact_match: Vec<bool>,
    pub mask: Vec<bool>,
    pub lengths: Vec<usize>,
}

impl SideBatch {
    fn build(sentences: &[&SentenceFeatures], cap: usize) -> SideBatch {
        let lengths: Vec<usize> = sentences.iter().map(|s| s.len().min(cap)).collect();
        let len = lengths.iter().copied().max().unwrap_or(0).max(1);
        let n = sentences.len() * len;
        let mut side = SideBatch {
            len,
            ids: vec![PAD; n],
            chars: vec![PAD; n * MAX_WORD_CHARS],
            pos_ids: vec![PAD; n],
            exact_match: vec![false; n],
            mask: vec![false; n],
            lengths,
        };
        for (b, s) in sentences.iter().enumerate() {
            for t in 0..side.lengths[b] {
                let at = b * len + t;
                side.ids[at] = s.ids[t];
                side.chars[at * MAX_WORD_CHARS..(at + 1) * MAX_WORD_CHARS].copy_from_slice(&s.chars[t]);
                side.pos_ids[at] = s.pos_ids[t];
                side.exact_match[at] = s.exact_match[t];
                side.mask[at] = true;
            }
        }
        side
    }

    pub fn row_mask(&self, b: usize) -> &[bool] {
        &self.mask[b * self.len..(b + 1) * self.len]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub size: usize,
    pub premise: SideBatch,
    pub hypothesis: SideBatch,
    pub labels: Vec<usize>,
}

/// Pad a group of examples; sentences longer than the caps are truncated.
pub fn build_batch(examples: &[&ProcessedExample], max_prem_len: usize, max_hyp_len: usize) -> Result<Batch> {
    if examples.is_empty() {
        return Err(Error::invalid("build_batch", "empty batch"));
    }
    if max_prem_len == 0 || max_hyp_len == 0 {
        return Err(Error::invalid("build_batch", "length caps must be positive"));
    }
    let prem: Vec<&SentenceFeatures> = examples.iter().map(|e| &e.premise).collect();
    let hyp: Vec<&SentenceFeatures> = examples.iter().map(|e| &e.hypothesis).collect();
    Ok(Batch {
        size: examples.len(),
        premise: SideBatch::build(&prem, max_prem_len),
        hypothesis: SideBatch::build(&hyp, max_hyp_len),
        labels: examples.iter().map(|e| e.label.id()).collect(),
    })
}
