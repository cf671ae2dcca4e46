//! Finite-difference checks of every parameter tensor, block by block, in
//! f64 on small spatial sizes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{grad_check, GradCheckConfig, GradReport, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::Result;
use crate::model::{bind_store, densenet, embed, encoder, Diin, Dropout, ModelConfig};
use crate::text::batch::SideBatch;

pub const BLOCKS: [&str; 7] = [
    "embedding",
    "char_cnn",
    "highway",
    "attention_fuse",
    "dense_block",
    "transition",
    "classifier",
];

/// Premise and hypothesis lengths used for the checks.
const LEN_P: usize = 3;
const LEN_H: usize = 4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Check `ids` against the loss `Σ forward(input) ⊙ R` for a fixed random
/// `R`, with `input` drawn from `gen`.
fn check_projected<I, G, F>(
    block: &str,
    store: &mut ParamStore<f64>,
    ids: &[ParamId],
    rng: &mut ChaCha8Rng,
    mut gen: G,
    forward: F,
    cfg: &GradCheckConfig,
) -> Result<GradReport>
where
    G: FnMut(&mut ChaCha8Rng) -> Result<I>,
    F: for<'p> Fn(&mut Tape<'p, f64>, &'p ParamStore<f64>, &I) -> Result<Var>,
{
    let input = gen(rng)?;
    let shape = {
        let mut tape = Tape::new();
        let out = forward(&mut tape, store, &input)?;
        tape.shape(out).to_vec()
    };
    let r = random(&shape, rng);
    grad_check(
        block,
        store,
        ids,
        |tape, store| {
            let out = forward(tape, store, &input)?;
            let rv = tape.input(r.clone(), false);
            let m = tape.mul(out, rv)?;
            tape.sum(m)
        },
        cfg,
    )
}

fn merge(block: &str, parts: Vec<GradReport>, tol: f64) -> GradReport {
    let params: Vec<_> = parts.into_iter().flat_map(|r| r.params).collect();
    let max_rel_error = params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max);
    GradReport {
        block: block.to_string(),
        params,
        max_rel_error,
        tol,
    }
}

/// One report per entry of [`BLOCKS`]; together they cover every parameter
/// tensor of the model exactly once.
pub fn check_blocks(model_cfg: &ModelConfig, seed: u64, cfg: &GradCheckConfig) -> Result<Vec<GradReport>> {
    let model = Diin::<f64>::new(model_cfg.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let gen_side = |rng: &mut ChaCha8Rng| -> Result<SideBatch> {
        Ok(model.probe_batch_seeded(2, LEN_P, LEN_H, rng.gen())?.premise)
    };
    let Diin {
        config,
        params: mut store,
        layout,
    } = model.clone();
    let mut reports = Vec::with_capacity(BLOCKS.len());
    let (df, d) = (config.feature_dim(), config.encoder_width());

    let e = &layout.embed;
    reports.push(check_projected(
        "embedding",
        &mut store,
        &[e.word_table, e.char_table],
        &mut rng,
        gen_side,
        |tape, store, s: &SideBatch| {
            let bound = bind_store(store, tape, true);
            embed::embed_side(tape, &config, e, &bound, s, 2, &mut Dropout::off())
        },
        cfg,
    )?);

    reports.push(check_projected(
        "char_cnn",
        &mut store,
        &[e.char_kernel, e.char_bias],
        &mut rng,
        gen_side,
        |tape, store, s: &SideBatch| {
            let bound = bind_store(store, tape, true);
            embed::char_cnn(tape, e, &bound, &s.chars, &mut Dropout::off())
        },
        cfg,
    )?);

    let enc = &layout.encoder;
    let mut ids = vec![enc.proj_w, enc.proj_b];
    for hw in &enc.highway {
        ids.extend([hw.transform_w, hw.transform_b, hw.gate_w, hw.gate_b]);
    }
    reports.push(check_projected(
        "highway",
        &mut store,
        &ids,
        &mut rng,
        |rng| Ok(random(&[LEN_H, df], rng)),
        |tape, store, feats| {
            let bound = bind_store(store, tape, true);
            let x = tape.input(feats.clone(), false);
            let mut h = tape.linear(x, bound[enc.proj_w], bound[enc.proj_b])?;
            for hw in &enc.highway {
                h = encoder::highway_layer(tape, hw, &bound, h, &mut Dropout::off())?;
            }
            Ok(h)
        },
        cfg,
    )?);

    let mask = [true, true, true, false];
    let mut ids = vec![enc.attn_w];
    for (w, b) in enc.fuse {
        ids.extend([w, b]);
    }
    reports.push(check_projected(
        "attention_fuse",
        &mut store,
        &ids,
        &mut rng,
        |rng| Ok(random(&[LEN_H, d], rng)),
        |tape, store, h_in| {
            let bound = bind_store(store, tape, true);
            let h = tape.input(h_in.clone(), false);
            encoder::attend_and_fuse(tape, enc, &bound, h, &mask, &mut Dropout::off())
        },
        cfg,
    )?);

    // Each dense block (the first preceded by the scale-down conv) and each
    // transition sees a fresh random input of its own width and size.
    let dn = &layout.densenet;
    let traj = config.channel_trajectory();
    let mut spatial = (LEN_P, LEN_H);
    let mut block_parts = Vec::new();
    let mut transition_parts = Vec::new();
    for k in 0..dn.blocks.len() {
        let (cin, scale) = if k == 0 { (d, true) } else { (traj[2 * k], false) };
        let mut ids: Vec<ParamId> = Vec::new();
        if scale {
            ids.extend([dn.scale_down.kernel, dn.scale_down.bias]);
        }
        for l in &dn.blocks[k] {
            ids.extend([l.kernel, l.bias]);
        }
        block_parts.push(check_projected(
            "dense_block",
            &mut store,
            &ids,
            &mut rng,
            |rng| Ok(random(&[spatial.0, spatial.1, cin], rng)),
            |tape, store, x_in| {
                let bound = bind_store(store, tape, true);
                let mut x = tape.input(x_in.clone(), false);
                if scale {
                    x = densenet::scale_down(tape, &dn.scale_down, &bound, x)?;
                }
                densenet::dense_block(tape, &dn.blocks[k], &bound, x)
            },
            cfg,
        )?);

        let tr = &dn.transitions[k];
        transition_parts.push(check_projected(
            "transition",
            &mut store,
            &[tr.kernel, tr.bias],
            &mut rng,
            |rng| Ok(random(&[spatial.0, spatial.1, traj[2 * k + 1]], rng)),
            |tape, store, t_in| {
                let bound = bind_store(store, tape, true);
                let x = tape.input(t_in.clone(), false);
                densenet::transition(tape, tr, &bound, x)
            },
            cfg,
        )?);
        spatial = (spatial.0.div_ceil(2), spatial.1.div_ceil(2));
    }
    reports.push(merge("dense_block", block_parts, cfg.tol));
    reports.push(merge("transition", transition_parts, cfg.tol));

    let (w, b) = layout.classifier;
    let f_in = random(&[config.output_features()], &mut rng);
    reports.push(grad_check(
        "classifier",
        &mut store,
        &[w, b],
        |tape, store| {
            let bound = bind_store(store, tape, true);
            let f = tape.input(f_in.clone(), false);
            let logits = densenet::classify(tape, f, bound[w], bound[b], &mut Dropout::off())?;
            tape.softmax_cross_entropy(logits, 1)
        },
        cfg,
    )?);
    Ok(reports)
}
