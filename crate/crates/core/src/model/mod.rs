//! The DIIN architecture: embedding, encoding, interaction, DenseNet feature
//! extraction and the softmax output layer.

pub mod audit;
pub mod census;
pub mod config;
pub mod densenet;
pub mod embed;
pub mod encoder;
pub mod gradcheck;

use std::ops::Index;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::text::batch::Batch;
use crate::text::embeddings::EmbeddingTable;
use crate::text::vocab::{Index as VocabIndex, PAD};

pub use audit::{audit_model, audit_structure, StructureReport};
pub use census::{count_params, CensusEntry, LayerCensus};
pub use config::{scaled_channels, ModelConfig, NUM_BLOCKS};
pub use embed::FeatureLayout;

/// Dropout context threaded through a forward pass. Inactive in eval mode.
pub struct Dropout<'r> {
    rate: f64,
    rng: Option<&'r mut dyn RngCore>,
}

impl<'r> Dropout<'r> {
    pub fn off() -> Self {
        Dropout { rate: 0.0, rng: None }
    }

    pub fn on(rate: f64, rng: &'r mut dyn RngCore) -> Self {
        Dropout { rate, rng: Some(rng) }
    }

    pub fn is_active(&self) -> bool {
        self.rng.is_some() && self.rate > 0.0
    }

    pub fn apply<T: Scalar>(&mut self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        match self.rng.as_deref_mut() {
            Some(rng) if self.rate > 0.0 => tape.dropout(x, self.rate, rng),
            _ => Ok(x),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EmbedParams {
    pub word_table: ParamId,
    pub char_table: ParamId,
    pub char_kernel: ParamId,
    pub char_bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct HighwayParams {
    pub transform_w: ParamId,
    pub transform_b: ParamId,
    pub gate_w: ParamId,
    pub gate_b: ParamId,
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub highway: Vec<HighwayParams>,
    pub attn_w: ParamId,
    /// Candidate (tanh), keep (r) and fuse (f) gates, as (weight, bias).
    pub fuse: [(ParamId, ParamId); 3],
}

#[derive(Clone, Debug)]
pub struct ConvParams {
    pub kernel: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct DenseNetParams {
    pub scale_down: ConvParams,
    pub blocks: Vec<Vec<ConvParams>>,
    pub transitions: Vec<ConvParams>,
}

#[derive(Clone, Debug)]
pub struct Layout {
    pub embed: EmbedParams,
    pub encoder: EncoderParams,
    pub densenet: DenseNetParams,
    pub classifier: (ParamId, ParamId),
}

/// Parameters bound onto one tape, indexed by [`ParamId`].
pub struct Bound(Vec<Var>);

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.index()]
    }
}

struct Init<'a> {
    rng: ChaCha8Rng,
    store: &'a mut ParamStore<f64>,
}

impl Init<'_> {
    fn glorot(&mut self, name: &str, shape: &[usize], fan_in: usize, fan_out: usize) -> Result<ParamId> {
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let t = Tensor::from_fn(shape, |_| self.rng.gen_range(-s..s));
        self.store.add(name, t)
    }

    fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.store.add(name, Tensor::zeros(shape))
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<(ParamId, ParamId)> {
        let w = self.glorot(&format!("{name}.w"), &[fan_in, fan_out], fan_in, fan_out)?;
        let b = self.zeros(&format!("{name}.b"), &[fan_out])?;
        Ok((w, b))
    }

    fn conv(&mut self, name: &str, k: usize, cin: usize, cout: usize) -> Result<ConvParams> {
        let kernel = self.glorot(&format!("{name}.w"), &[k, k, cin, cout], k * k * cin, k * k * cout)?;
        let bias = self.zeros(&format!("{name}.b"), &[cout])?;
        Ok(ConvParams { kernel, bias })
    }

    fn embedding(&mut self, name: &str, rows: usize, dim: usize) -> Result<ParamId> {
        let t = Tensor::from_fn(&[rows, dim], |_| self.rng.gen_range(-0.05..0.05));
        let id = self.store.add(name, t)?;
        self.store.freeze_row(id, PAD);
        Ok(id)
    }
}

fn build_layout(cfg: &ModelConfig, init: &mut Init<'_>) -> Result<Layout> {
    let embed = EmbedParams {
        word_table: init.embedding("embed.word_table", cfg.word_vocab, cfg.word_dim)?,
        char_table: init.embedding("embed.char_table", cfg.char_vocab, cfg.char_dim)?,
        char_kernel: init.glorot(
            "embed.char_kernel",
            &[cfg.char_kernel, cfg.char_dim, cfg.char_filters],
            cfg.char_kernel * cfg.char_dim,
            cfg.char_kernel * cfg.char_filters,
        )?,
        char_bias: init.zeros("embed.char_bias", &[cfg.char_filters])?,
    };

    let (df, d) = (cfg.feature_dim(), cfg.encoder_width());
    let (proj_w, proj_b) = init.linear("encoder.proj", df, d)?;
    let mut highway = Vec::with_capacity(cfg.highway_layers);
    for i in 0..cfg.highway_layers {
        let (transform_w, transform_b) = init.linear(&format!("encoder.highway{i}.transform"), d, d)?;
        let (gate_w, gate_b) = init.linear(&format!("encoder.highway{i}.gate"), d, d)?;
        highway.push(HighwayParams {
            transform_w,
            transform_b,
            gate_w,
            gate_b,
        });
    }
    let attn_w = init.glorot("encoder.attn.w", &[3 * d], 3 * d, 1)?;
    let fuse = [
        init.linear("encoder.fuse.z", 2 * d, d)?,
        init.linear("encoder.fuse.r", 2 * d, d)?,
        init.linear("encoder.fuse.f", 2 * d, d)?,
    ];
    let encoder = EncoderParams {
        proj_w,
        proj_b,
        highway,
        attn_w,
        fuse,
    };

    let traj = cfg.channel_trajectory();
    let scale_down = init.conv("densenet.scale_down", 1, d, traj[0])?;
    let mut blocks = Vec::with_capacity(NUM_BLOCKS);
    let mut transitions = Vec::with_capacity(NUM_BLOCKS);
    let mut c = traj[0];
    for k in 0..NUM_BLOCKS {
        let mut layers = Vec::with_capacity(cfg.layers_per_block);
        for i in 0..cfg.layers_per_block {
            layers.push(init.conv(&format!("densenet.block{}.layer{i}", k + 1), 3, c, cfg.growth_rate)?);
            c += cfg.growth_rate;
        }
        blocks.push(layers);
        let next = scaled_channels(c, cfg.transition_ratio);
        transitions.push(init.conv(&format!("densenet.transition{}", k + 1), 1, c, next)?);
        c = next;
    }
    let densenet = DenseNetParams {
        scale_down,
        blocks,
        transitions,
    };
    let classifier = init.linear("classifier", c, 3)?;
    Ok(Layout {
        embed,
        encoder,
        densenet,
        classifier,
    })
}

/// Put every tensor of `store` on the tape.
pub fn bind_store<'p, T: Scalar>(store: &'p ParamStore<T>, tape: &mut Tape<'p, T>, requires_grad: bool) -> Bound {
    Bound(
        store
            .iter()
            .map(|(id, p)| tape.param(id, &p.value, requires_grad))
            .collect(),
    )
}

/// The full network: configuration, parameters and their layout.
#[derive(Clone, Debug)]
pub struct Diin<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    layout: Layout,
}

impl<T: Scalar> Diin<T> {
    /// Freshly initialized model. Initialization always runs in f64 and is
    /// then cast, so f32 and f64 models built from one seed agree.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::<f64>::new();
        let layout = build_layout(
            &config,
            &mut Init {
                rng: ChaCha8Rng::seed_from_u64(seed),
                store: &mut store,
            },
        )?;
        Ok(Diin {
            config,
            params: store.cast(),
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn cast<U: Scalar>(&self) -> Diin<U> {
        Diin {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    /// Overwrite word-table rows with pretrained vectors; returns how many
    /// rows were set.
    pub fn load_pretrained(&mut self, words: &VocabIndex, table: &EmbeddingTable) -> Result<usize> {
        if table.dim != self.config.word_dim && !table.is_empty() {
            return Err(Error::Config(format!(
                "embedding file has dim {}, model word_dim is {}",
                table.dim, self.config.word_dim
            )));
        }
        let id = self.layout.embed.word_table;
        let d = self.config.word_dim;
        let p = self.params.get_mut(id);
        let mut set = 0;
        for (word, row) in words.entries() {
            if row >= p.value.shape()[0] {
                continue;
            }
            if let Some(v) = table.get(word) {
                for (dst, &src) in p.value.data_mut()[row * d..(row + 1) * d].iter_mut().zip(v) {
                    *dst = T::of(src as f64);
                }
                set += 1;
            }
        }
        Ok(set)
    }

    pub fn bind<'p>(&'p self, tape: &mut Tape<'p, T>, requires_grad: bool) -> Bound {
        bind_store(&self.params, tape, requires_grad)
    }

    /// Logits `[3]` for each example in the batch.
    pub fn forward(
        &self,
        tape: &mut Tape<'_, T>,
        bound: &Bound,
        batch: &Batch,
        drop: &mut Dropout<'_>,
    ) -> Result<Vec<Var>> {
        let cfg = &self.config;
        tape.push_scope("embed");
        let prem = embed::embed_side(tape, cfg, &self.layout.embed, bound, &batch.premise, batch.size, drop)?;
        let hyp = embed::embed_side(
            tape,
            cfg,
            &self.layout.embed,
            bound,
            &batch.hypothesis,
            batch.size,
            drop,
        )?;
        tape.pop_scope();

        let mut logits = Vec::with_capacity(batch.size);
        for b in 0..batch.size {
            let (lp, lh) = (batch.premise.lengths[b], batch.hypothesis.lengths[b]);
            if lp == 0 || lh == 0 {
                return Err(Error::invalid("forward", format!("example {b} has an empty sentence")));
            }
            tape.push_scope("encoder");
            let pf = tape.slice_rows(prem, b, 1)?;
            let pf = tape.reshape(pf, &[batch.premise.len, cfg.feature_dim()])?;
            let p_enc = encoder::encode(tape, &self.layout.encoder, bound, pf, batch.premise.row_mask(b), drop)?;
            let hf = tape.slice_rows(hyp, b, 1)?;
            let hf = tape.reshape(hf, &[batch.hypothesis.len, cfg.feature_dim()])?;
            let h_enc = encoder::encode(
                tape,
                &self.layout.encoder,
                bound,
                hf,
                batch.hypothesis.row_mask(b),
                drop,
            )?;
            tape.pop_scope();

            // The feature extractor sees only the valid region, so an
            // example's prediction does not depend on its batch mates.
            tape.push_scope("interaction");
            let p_enc = tape.slice_rows(p_enc, 0, lp)?;
            let h_enc = tape.slice_rows(h_enc, 0, lh)?;
            let inter = encoder::interaction_tensor(tape, p_enc, h_enc, None, drop)?;
            tape.pop_scope();

            tape.push_scope("densenet");
            let feats = densenet::densenet_features(tape, &self.layout.densenet, bound, inter)?;
            tape.pop_scope();

            tape.push_scope("classifier");
            let (w, bias) = self.layout.classifier;
            logits.push(densenet::classify(tape, feats, bound[w], bound[bias], drop)?);
            tape.pop_scope();
        }
        Ok(logits)
    }

    /// Mean cross-entropy over the batch, plus per-example logits.
    pub fn loss(
        &self,
        tape: &mut Tape<'_, T>,
        bound: &Bound,
        batch: &Batch,
        drop: &mut Dropout<'_>,
    ) -> Result<(Var, Vec<Var>)> {
        let logits = self.forward(tape, bound, batch, drop)?;
        let mut losses = Vec::with_capacity(logits.len());
        for (&l, &label) in logits.iter().zip(&batch.labels) {
            losses.push(tape.softmax_cross_entropy(l, label)?);
        }
        let total = tape.add_n(&losses)?;
        let mean = tape.scale(total, T::one() / T::of(losses.len() as f64))?;
        Ok((mean, logits))
    }

    /// Deterministic synthetic batch of `size` examples with the given
    /// premise and hypothesis lengths, valid for this model's vocabularies.
    pub fn probe_batch(&self, size: usize, premise_len: usize, hypothesis_len: usize) -> Result<Batch> {
        self.probe_batch_seeded(size, premise_len, hypothesis_len, 0x5eed)
    }

    pub fn probe_batch_seeded(
        &self,
        size: usize,
        premise_len: usize,
        hypothesis_len: usize,
        seed: u64,
    ) -> Result<Batch> {
        use crate::text::features::{ProcessedExample, SentenceFeatures, MAX_WORD_CHARS};
        use crate::text::snli::Label;
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let side = |len: usize, rng: &mut ChaCha8Rng| SentenceFeatures {
            ids: (0..len).map(|_| rng.gen_range(1..cfg.word_vocab)).collect(),
            chars: (0..len)
                .map(|_| {
                    let n = rng.gen_range(1..=MAX_WORD_CHARS);
                    let mut row = [PAD; MAX_WORD_CHARS];
                    for c in &mut row[..n] {
                        *c = rng.gen_range(1..cfg.char_vocab);
                    }
                    row
                })
                .collect(),
            pos_ids: (0..len).map(|_| rng.gen_range(0..cfg.pos_vocab.max(1))).collect(),
            exact_match: (0..len).map(|_| rng.gen_bool(0.3)).collect(),
        };
        let examples: Vec<ProcessedExample> = (0..size)
            .map(|i| ProcessedExample {
                premise: side(premise_len, &mut rng),
                hypothesis: side(hypothesis_len, &mut rng),
                label: Label::ALL[i % 3],
            })
            .collect();
        let refs: Vec<&ProcessedExample> = examples.iter().collect();
        crate::text::batch::build_batch(&refs, premise_len.max(1), hypothesis_len.max(1))
    }

    /// Class probabilities in eval mode.
    pub fn predict_proba(&self, batch: &Batch) -> Result<Vec<[f64; 3]>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let logits = self.forward(&mut tape, &bound, batch, &mut Dropout::off())?;
        Ok(logits
            .iter()
            .map(|&l| {
                let v: Vec<f64> = tape.value(l).data().iter().map(|x| x.f64()).collect();
                let p = crate::autograd::masked_softmax_rows(&v, 3, &[true; 3]);
                [p[0], p[1], p[2]]
            })
            .collect())
    }
}
