//! Tensor kernels against plain nested-loop reference implementations on
//! random small instances. Each check returns the first mismatch.

use diin_core::autograd::{Tape, Tensor};
use diin_core::model::{bind_store, embed, encoder, Diin, Dropout, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-6;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn close(got: &[f64], want: &[f64], what: &str, case: usize) -> Result<(), String> {
    if got.len() != want.len() {
        return Err(format!(
            "{what} case {case}: {} values, expected {}",
            got.len(),
            want.len()
        ));
    }
    for (i, (a, b)) in got.iter().zip(want).enumerate() {
        if (a - b).abs() > TOL {
            return Err(format!("{what} case {case} index {i}: {a} vs {b}"));
        }
    }
    Ok(())
}

/// x: [h][w][c], k: [kh][kw][c][f], zero padding of kh/2, kw/2.
fn naive_conv(
    x: &[f64],
    (h, w, c): (usize, usize, usize),
    k: &[f64],
    (kh, kw, f): (usize, usize, usize),
    b: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; h * w * f];
    for i in 0..h {
        for j in 0..w {
            for o in 0..f {
                let mut s = b[o];
                for di in 0..kh {
                    for dj in 0..kw {
                        let si = i as isize + di as isize - (kh / 2) as isize;
                        let sj = j as isize + dj as isize - (kw / 2) as isize;
                        if si < 0 || sj < 0 || si >= h as isize || sj >= w as isize {
                            continue;
                        }
                        for ci in 0..c {
                            let xv = x[(si as usize * w + sj as usize) * c + ci];
                            let kv = k[((di * kw + dj) * c + ci) * f + o];
                            s += xv * kv;
                        }
                    }
                }
                out[(i * w + j) * f + o] = s;
            }
        }
    }
    out
}

pub fn conv2d(instances: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..instances {
        let (h, w, c) = (rng.gen_range(1..7), rng.gen_range(1..7), rng.gen_range(1..5));
        let (kh, kw, f) = (
            2 * rng.gen_range(0..3) + 1,
            2 * rng.gen_range(0..3) + 1,
            rng.gen_range(1..5),
        );
        let x = random(&[h, w, c], &mut rng);
        let k = random(&[kh, kw, c, f], &mut rng);
        let b = random(&[f], &mut rng);
        let mut tape = Tape::new();
        let (xv, kv, bv) = (
            tape.input(x.clone(), false),
            tape.input(k.clone(), false),
            tape.input(b.clone(), false),
        );
        let y = tape.conv2d(xv, kv, Some(bv)).map_err(|e| e.to_string())?;
        if tape.shape(y) != [h, w, f] {
            return Err(format!("case {case}: shape {:?}", tape.shape(y)));
        }
        let want = naive_conv(x.data(), (h, w, c), k.data(), (kh, kw, f), b.data());
        close(tape.value(y).data(), &want, "conv2d", case)?;
    }
    Ok(())
}

pub fn max_pool2d(instances: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..instances {
        let (h, w, c) = (rng.gen_range(1..9), rng.gen_range(1..9), rng.gen_range(1..4));
        let x = random(&[h, w, c], &mut rng);
        let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
        let mut want = vec![f64::NEG_INFINITY; oh * ow * c];
        for i in 0..h {
            for j in 0..w {
                for ch in 0..c {
                    let o = &mut want[((i / 2) * ow + j / 2) * c + ch];
                    *o = o.max(x.data()[(i * w + j) * c + ch]);
                }
            }
        }
        let mut tape = Tape::new();
        let xv = tape.input(x, false);
        let y = tape.max_pool2d(xv).map_err(|e| e.to_string())?;
        if tape.shape(y) != [oh, ow, c] {
            return Err(format!("case {case}: shape {:?}", tape.shape(y)));
        }
        close(tape.value(y).data(), &want, "max_pool2d", case)?;
    }
    Ok(())
}

fn tiny_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    ModelConfig {
        word_vocab: 5,
        char_vocab: rng.gen_range(3..12),
        pos_vocab: 3,
        word_dim: 2,
        char_dim: rng.gen_range(1..5),
        char_kernel: 2 * rng.gen_range(0..3) + 1,
        char_filters: rng.gen_range(1..6),
        highway_layers: 1,
        growth_rate: 1,
        layers_per_block: 1,
        ..ModelConfig::default()
    }
}

pub fn char_cnn(instances: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..instances {
        let cfg = tiny_config(&mut rng);
        let model = Diin::<f64>::new(cfg.clone(), rng.gen()).map_err(|e| e.to_string())?;
        let n = rng.gen_range(1..5);
        // Each token: a random number of real chars followed by padding,
        // sometimes none at all.
        let mut chars = vec![0usize; n * 16];
        for t in 0..n {
            let len = rng.gen_range(0..=16);
            for slot in &mut chars[t * 16..t * 16 + len] {
                *slot = rng.gen_range(1..cfg.char_vocab);
            }
        }
        let mut tape = Tape::new();
        let bound = bind_store(model.params(), &mut tape, false);
        let layout = model.layout();
        let y = embed::char_cnn(&mut tape, &layout.embed, &bound, &chars, &mut Dropout::off())
            .map_err(|e| e.to_string())?;
        if tape.shape(y) != [n, cfg.char_filters] {
            return Err(format!("case {case}: shape {:?}", tape.shape(y)));
        }

        let table = model.params().get(layout.embed.char_table).value.data();
        let kernel = model.params().get(layout.embed.char_kernel).value.data();
        let bias = model.params().get(layout.embed.char_bias).value.data();
        let (cd, k, f) = (cfg.char_dim, cfg.char_kernel, cfg.char_filters);
        let mut want = Vec::new();
        for t in 0..n {
            let row = &chars[t * 16..(t + 1) * 16];
            let mut best = vec![f64::NEG_INFINITY; f];
            let mut any = false;
            for pos in 0..16 {
                if row[pos] == 0 {
                    continue;
                }
                any = true;
                for o in 0..f {
                    let mut s = bias[o];
                    for dk in 0..k {
                        let src = pos as isize + dk as isize - (k / 2) as isize;
                        if !(0..16).contains(&src) {
                            continue;
                        }
                        let id = row[src as usize];
                        for ci in 0..cd {
                            s += table[id * cd + ci] * kernel[(dk * cd + ci) * f + o];
                        }
                    }
                    best[o] = best[o].max(s.max(0.0));
                }
            }
            if !any {
                best.fill(0.0);
            }
            want.extend(best);
        }
        close(tape.value(y).data(), &want, "char_cnn", case)?;
    }
    Ok(())
}

pub fn interaction_tensor(instances: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..instances {
        let (lp, lh, d) = (rng.gen_range(1..7), rng.gen_range(1..7), rng.gen_range(1..6));
        let p = random(&[lp, d], &mut rng);
        let h = random(&[lh, d], &mut rng);
        let pm: Vec<bool> = (0..lp).map(|_| rng.gen_bool(0.8)).collect();
        let hm: Vec<bool> = (0..lh).map(|_| rng.gen_bool(0.8)).collect();
        let mut want = vec![0.0; lp * lh * d];
        for i in 0..lp {
            for j in 0..lh {
                for k in 0..d {
                    if pm[i] && hm[j] {
                        want[(i * lh + j) * d + k] = p.data()[i * d + k] * h.data()[j * d + k];
                    }
                }
            }
        }
        let mut tape = Tape::new();
        let (pv, hv) = (tape.input(p, false), tape.input(h, false));
        let y = encoder::interaction_tensor(&mut tape, pv, hv, Some((&pm, &hm)), &mut Dropout::off())
            .map_err(|e| e.to_string())?;
        if tape.shape(y) != [lp, lh, d] {
            return Err(format!("case {case}: shape {:?}", tape.shape(y)));
        }
        close(tape.value(y).data(), &want, "interaction", case)?;
    }
    Ok(())
}
