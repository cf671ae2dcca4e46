use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::features::MAX_WORD_CHARS;

/// Dense blocks (and transition layers) in the feature extractor.
pub const NUM_BLOCKS: usize = 3;

/// Every architectural hyperparameter. Vocabulary sizes are part of the
/// config so that the parameter census is a pure function of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Word table rows, reserved padding/unknown rows included.
    pub word_vocab: usize,
    pub char_vocab: usize,
    /// Width of the POS one-hot segment.
    pub pos_vocab: usize,
    pub word_dim: usize,
    pub char_dim: usize,
    pub char_kernel: usize,
    pub char_filters: usize,
    /// Encoder width; the feature width when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub encoder_dim: Option<usize>,
    pub highway_layers: usize,
    pub first_scale_ratio: f64,
    pub growth_rate: usize,
    pub layers_per_block: usize,
    pub transition_ratio: f64,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            word_vocab: 2,
            char_vocab: 2,
            pos_vocab: 2,
            word_dim: 300,
            char_dim: 8,
            char_kernel: 5,
            char_filters: 100,
            encoder_dim: None,
            highway_layers: 2,
            first_scale_ratio: 0.3,
            growth_rate: 20,
            layers_per_block: 8,
            transition_ratio: 0.5,
            dropout: 0.2,
        }
    }
}

/// `floor(c · ratio)`, tolerant of binary rounding (`0.29 · 100` is 29).
pub fn scaled_channels(c: usize, ratio: f64) -> usize {
    (c as f64 * ratio + 1e-9).floor() as usize
}

impl ModelConfig {
    /// Small configuration used by tests and the reference census.
    pub fn toy() -> Self {
        ModelConfig {
            word_vocab: 1000,
            char_vocab: 64,
            pos_vocab: 48,
            word_dim: 16,
            growth_rate: 8,
            layers_per_block: 2,
            ..Default::default()
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.word_dim + self.char_filters + self.pos_vocab + 1
    }

    pub fn encoder_width(&self) -> usize {
        self.encoder_dim.unwrap_or_else(|| self.feature_dim())
    }

    pub fn char_width(&self) -> usize {
        MAX_WORD_CHARS
    }

    /// Channel count after scale-down, after each dense block and after
    /// each transition: `[c0, b1, t1, b2, t2, b3, t3]`.
    pub fn channel_trajectory(&self) -> Vec<usize> {
        let mut c = scaled_channels(self.encoder_width(), self.first_scale_ratio);
        let mut out = vec![c];
        for _ in 0..NUM_BLOCKS {
            c += self.growth_rate * self.layers_per_block;
            out.push(c);
            c = scaled_channels(c, self.transition_ratio);
            out.push(c);
        }
        out
    }

    pub fn output_features(&self) -> usize {
        *self.channel_trajectory().last().expect("non-empty trajectory")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.word_vocab < 2 || self.char_vocab < 2 || self.pos_vocab < 2 {
            return bad("vocabularies need at least the two reserved ids".into());
        }
        for (name, v) in [
            ("word_dim", self.word_dim),
            ("char_dim", self.char_dim),
            ("char_filters", self.char_filters),
            ("highway_layers", self.highway_layers),
            ("growth_rate", self.growth_rate),
            ("layers_per_block", self.layers_per_block),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.char_kernel.is_multiple_of(2) {
            return bad(format!("char_kernel must be odd, got {}", self.char_kernel));
        }
        if self.encoder_dim == Some(0) {
            return bad("encoder_dim must be positive".into());
        }
        for (name, r) in [
            ("first_scale_ratio", self.first_scale_ratio),
            ("transition_ratio", self.transition_ratio),
        ] {
            if !(r > 0.0 && r <= 1.0) {
                return bad(format!("{name} must lie in (0, 1], got {r}"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if let Some(i) = self.channel_trajectory().iter().position(|&c| c == 0) {
            return bad(format!("channel count collapses to zero at stage {i}"));
        }
        Ok(())
    }
}
