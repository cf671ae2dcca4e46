use crate::autograd::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{Bound, Dropout, EmbedParams, ModelConfig};
use crate::scalar::Scalar;
use crate::text::batch::SideBatch;
use crate::text::features::MAX_WORD_CHARS;
use crate::text::vocab::PAD;

/// Segment offsets `(start, width)` of the per-token feature vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureLayout {
    pub word: (usize, usize),
    pub char: (usize, usize),
    pub pos: (usize, usize),
    pub exact_match: (usize, usize),
}

impl FeatureLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let word = (0, cfg.word_dim);
        let char = (word.0 + word.1, cfg.char_filters);
        let pos = (char.0 + char.1, cfg.pos_vocab);
        let exact_match = (pos.0 + pos.1, 1);
        FeatureLayout {
            word,
            char,
            pos,
            exact_match,
        }
    }

    pub fn total(&self) -> usize {
        self.exact_match.0 + self.exact_match.1
    }
}

/// Char-level representation of `n` tokens from `n × 16` char ids:
/// embed, same-padded convolution over character positions, ReLU, then
/// max over the non-padding positions. Returns `[n, filters]`.
pub fn char_cnn<T: Scalar>(
    tape: &mut Tape<'_, T>,
    p: &EmbedParams,
    bound: &Bound,
    chars: &[usize],
    drop: &mut Dropout<'_>,
) -> Result<Var> {
    if chars.is_empty() || !chars.len().is_multiple_of(MAX_WORD_CHARS) {
        return Err(Error::invalid(
            "char_cnn",
            format!("char ids must come in rows of {MAX_WORD_CHARS}, got {}", chars.len()),
        ));
    }
    let n = chars.len() / MAX_WORD_CHARS;
    let table = bound[p.char_table];
    let cdim = tape.shape(table)[1];
    let e = tape.gather(table, chars)?;
    let e = drop.apply(tape, e)?;
    let e = tape.reshape(e, &[n, MAX_WORD_CHARS, cdim])?;
    let kshape = tape.shape(bound[p.char_kernel]).to_vec();
    let kernel = tape.reshape(bound[p.char_kernel], &[1, kshape[0], kshape[1], kshape[2]])?;
    let c = tape.conv2d(e, kernel, Some(bound[p.char_bias]))?;
    let c = tape.relu(c)?;
    let mask: Vec<bool> = chars.iter().map(|&c| c != PAD).collect();
    tape.masked_max_time(c, &mask)
}

fn one_hot<T: Scalar>(ids: &[usize], width: usize, what: &'static str) -> Result<Tensor<T>> {
    let mut data = vec![T::zero(); ids.len() * width];
    for (r, &id) in ids.iter().enumerate() {
        if id == PAD {
            continue;
        }
        if id >= width {
            return Err(Error::invalid(what, format!("id {id} out of range for width {width}")));
        }
        data[r * width + id] = T::one();
    }
    Tensor::new(&[ids.len(), width], data)
}

/// Feature vectors `[batch, len, d_feat]` for one side of a batch.
pub fn embed_side<T: Scalar>(
    tape: &mut Tape<'_, T>,
    cfg: &ModelConfig,
    p: &EmbedParams,
    bound: &Bound,
    side: &SideBatch,
    batch: usize,
    drop: &mut Dropout<'_>,
) -> Result<Var> {
    let n = batch * side.len;
    if side.ids.len() != n || side.pos_ids.len() != n || side.exact_match.len() != n || side.mask.len() != n {
        return Err(Error::invalid("embed_side", "inconsistent batch arrays"));
    }
    let words = tape.gather(bound[p.word_table], &side.ids)?;
    let words = drop.apply(tape, words)?;
    let chars = char_cnn(tape, p, bound, &side.chars, drop)?;
    let pos = tape.input(one_hot(&side.pos_ids, cfg.pos_vocab, "pos one-hot")?, false);
    let em = side
        .exact_match
        .iter()
        .map(|&m| if m { T::one() } else { T::zero() })
        .collect();
    let em = tape.input(Tensor::new(&[n, 1], em)?, false);
    let feats = tape.concat(&[words, chars, pos, em])?;
    tape.reshape(feats, &[batch, side.len, cfg.feature_dim()])
}
