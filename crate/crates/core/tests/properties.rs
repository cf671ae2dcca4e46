use std::collections::HashSet;

use diin_core::autograd::{ParamStore, Tape, Tensor};
use diin_core::model::{bind_store, encoder, Diin, Dropout, ModelConfig};
use diin_core::optim::{plateau_decision, Decision, L2Schedule, OptimKind, Optimizer, PlateauTracker, SwitchPolicy};
use diin_core::text::{build_batch, extract_pos, featurize, featurize_frozen, Label, Leaf, RawExample, Vocab};
use diin_core::train::{Checkpoint, EvalMode, TrainConfig, TrainState};
use proptest::prelude::*;

fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        word_vocab: 12,
        char_vocab: 8,
        pos_vocab: 4,
        word_dim: 3,
        char_dim: 2,
        char_kernel: 3,
        char_filters: 2,
        highway_layers: 1,
        growth_rate: 2,
        layers_per_block: 1,
        ..ModelConfig::default()
    }
}

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, n)
}

// ---- parse trees ----

#[derive(Clone, Debug)]
enum Tree {
    Leaf(String, String),
    Node(String, Vec<Tree>),
}

impl Tree {
    fn render(&self) -> String {
        match self {
            Tree::Leaf(tag, tok) => format!("({tag} {tok})"),
            Tree::Node(label, kids) => {
                let inner: Vec<String> = kids.iter().map(Tree::render).collect();
                format!("({label} {})", inner.join(" "))
            }
        }
    }

    fn leaves(&self, out: &mut Vec<Leaf>) {
        match self {
            Tree::Leaf(pos, token) => out.push(Leaf {
                pos: pos.clone(),
                token: token.clone(),
            }),
            Tree::Node(_, kids) => kids.iter().for_each(|k| k.leaves(out)),
        }
    }
}

fn tree() -> impl Strategy<Value = Tree> {
    let leaf = ("[A-Z]{1,3}\\$?", "[a-zA-Z0-9.,'-]{1,6}").prop_map(|(t, w)| Tree::Leaf(t, w));
    leaf.prop_recursive(4, 24, 4, |inner| {
        ("[A-Z]{1,4}", prop::collection::vec(inner, 1..4)).prop_map(|(l, k)| Tree::Node(l, k))
    })
}

proptest! {
    #[test]
    fn parse_leaves_match_rendered_tree(t in tree(), pad in " {0,2}") {
        let text = format!("{pad}(ROOT {}){pad}", t.render());
        let mut want = Vec::new();
        t.leaves(&mut want);
        prop_assert_eq!(extract_pos(&text).unwrap(), want);
    }
}

// ---- featurization ----

const LEXICON: [&str; 8] = ["a", "A", "dog", "Dog", "runs", "cat", "the", "The"];

fn sentence() -> impl Strategy<Value = Vec<(usize, usize)>> {
    prop::collection::vec((0..LEXICON.len(), 0..3usize), 1..8)
}

fn raw(p: &[(usize, usize)], h: &[(usize, usize)]) -> RawExample {
    let tags = ["DT", "NN", "VBZ"];
    let side = |s: &[(usize, usize)]| -> Vec<(&str, &str)> { s.iter().map(|&(w, t)| (LEXICON[w], tags[t])).collect() };
    RawExample::new(Label::Neutral, &side(p), &side(h))
}

proptest! {
    #[test]
    fn featurize_is_deterministic_and_in_range(p in sentence(), h in sentence(), q in sentence()) {
        let mut vocab = Vocab::new();
        let first = featurize(&raw(&p, &h), &mut vocab);
        let unseen = raw(&q, &p);
        let mut again = vocab.clone();
        prop_assert_eq!(featurize(&raw(&p, &h), &mut again), first.clone());
        vocab.freeze();
        let a = featurize_frozen(&unseen, &vocab);
        prop_assert_eq!(featurize_frozen(&unseen, &vocab), a.clone());
        for ex in [&first, &a] {
            for s in [&ex.premise, &ex.hypothesis] {
                prop_assert!(s.ids.iter().all(|&i| i < vocab.words.len()));
                prop_assert!(s.pos_ids.iter().all(|&i| i < vocab.pos.len()));
                prop_assert!(s.chars.iter().flatten().all(|&i| i < vocab.chars.len()));
            }
        }
    }

    #[test]
    fn exact_match_is_symmetric(p in sentence(), h in sentence()) {
        let r = raw(&p, &h);
        let ex = featurize(&r, &mut Vocab::new());
        let lower = |t: &[String]| -> HashSet<String> { t.iter().map(|w| w.to_lowercase()).collect() };
        let (ps, hs) = (lower(&r.premise_tokens), lower(&r.hypothesis_tokens));
        for (tok, &flag) in r.premise_tokens.iter().zip(&ex.premise.exact_match) {
            prop_assert_eq!(flag, hs.contains(&tok.to_lowercase()));
        }
        for (tok, &flag) in r.hypothesis_tokens.iter().zip(&ex.hypothesis.exact_match) {
            prop_assert_eq!(flag, ps.contains(&tok.to_lowercase()));
        }
    }

    #[test]
    fn batch_masks_count_capped_lengths(
        pairs in prop::collection::vec((sentence(), sentence()), 1..6),
        cp in 1..6usize,
        ch in 1..6usize,
    ) {
        let mut vocab = Vocab::new();
        let exs: Vec<_> = pairs.iter().map(|(p, h)| featurize(&raw(p, h), &mut vocab)).collect();
        let refs: Vec<_> = exs.iter().collect();
        let b = build_batch(&refs, cp, ch).unwrap();
        for (i, (p, h)) in pairs.iter().enumerate() {
            prop_assert_eq!(b.premise.row_mask(i).iter().filter(|&&m| m).count(), p.len().min(cp));
            prop_assert_eq!(b.hypothesis.row_mask(i).iter().filter(|&&m| m).count(), h.len().min(ch));
        }
        for side in [&b.premise, &b.hypothesis] {
            for (&m, &id) in side.mask.iter().zip(&side.ids) {
                prop_assert!(m || id == 0);
            }
        }
    }
}

// ---- tensor ops ----

proptest! {
    #[test]
    fn masked_softmax_is_a_distribution(
        rows in 1..4usize,
        x in values(24),
        mask in prop::collection::vec(any::<bool>(), 6),
        keep in 0..6usize,
    ) {
        let mut mask = mask;
        mask[keep] = true;
        let mut tape = Tape::<f64>::new();
        let v = tape.input(Tensor::new(&[rows, 6], x[..rows * 6].to_vec()).unwrap(), false);
        let y = tape.masked_softmax(v, &mask).unwrap();
        for row in tape.value(y).data().chunks(6) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            for (&p, &m) in row.iter().zip(&mask) {
                prop_assert!(p >= 0.0);
                prop_assert!(m || p == 0.0);
            }
        }
    }

    #[test]
    fn max_pool_gradient_lands_on_window_argmax(h in 1..6usize, w in 1..6usize, x in values(36), r in values(9)) {
        let mut tape = Tape::<f64>::new();
        let xv = tape.input(Tensor::new(&[h, w, 1], x[..h * w].to_vec()).unwrap(), true);
        let y = tape.max_pool2d(xv).unwrap();
        let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
        let up = tape.input(Tensor::new(&[oh, ow, 1], r[..oh * ow].to_vec()).unwrap(), false);
        let weighted = tape.mul(y, up).unwrap();
        let loss = tape.sum(weighted).unwrap();
        let g = tape.backward(loss).unwrap().get(xv);
        for i in 0..oh {
            for j in 0..ow {
                let cells: Vec<usize> = (2 * i..(2 * i + 2).min(h))
                    .flat_map(|a| (2 * j..(2 * j + 2).min(w)).map(move |b| a * w + b))
                    .collect();
                let arg = *cells.iter().max_by(|&&a, &&b| x[a].total_cmp(&x[b])).unwrap();
                let total: f64 = cells.iter().map(|&c| g.data()[c]).sum();
                prop_assert!((total - r[i * ow + j]).abs() < 1e-12);
                for &c in &cells {
                    prop_assert!(c == arg || g.data()[c] == 0.0);
                }
            }
        }
    }

    #[test]
    fn interaction_is_transpose_symmetric(lp in 1..5usize, lh in 1..5usize, d in 1..4usize, a in values(16), b in values(16)) {
        let mut tape = Tape::<f64>::new();
        let p = tape.input(Tensor::new(&[lp, d], a[..lp * d].to_vec()).unwrap(), false);
        let h = tape.input(Tensor::new(&[lh, d], b[..lh * d].to_vec()).unwrap(), false);
        let ph = tape.interaction(p, h).unwrap();
        let hp = tape.interaction(h, p).unwrap();
        let (x, y) = (tape.value(ph).data(), tape.value(hp).data());
        for i in 0..lp {
            for j in 0..lh {
                for k in 0..d {
                    prop_assert_eq!(x[(i * lh + j) * d + k], y[(j * lp + i) * d + k]);
                }
            }
        }
    }
}

// ---- model ----

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn encode_commutes_with_permutation(seed in any::<u64>(), len in 1..6usize, x in values(6 * 10), perm_seed in any::<u64>()) {
        let cfg = tiny_model_config();
        let df = cfg.feature_dim();
        let model = Diin::<f64>::new(cfg, seed).unwrap();
        let mut perm: Vec<usize> = (0..len).collect();
        let mut s = perm_seed;
        for i in (1..len).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let feats = Tensor::new(&[len, df], x[..len * df].to_vec()).unwrap();
        let permuted = Tensor::from_fn(&[len, df], |k| feats.data()[perm[k / df] * df + k % df]);
        let mask = vec![true; len];
        let mut tape = Tape::new();
        let bound = bind_store(model.params(), &mut tape, false);
        let enc = &model.layout().encoder;
        let a = tape.input(feats, false);
        let a = encoder::encode(&mut tape, enc, &bound, a, &mask, &mut Dropout::off()).unwrap();
        let b = tape.input(permuted, false);
        let b = encoder::encode(&mut tape, enc, &bound, b, &mask, &mut Dropout::off()).unwrap();
        let d = tape.shape(a)[1];
        let (ya, yb) = (tape.value(a).data(), tape.value(b).data());
        for i in 0..len {
            for k in 0..d {
                prop_assert!((yb[i * d + k] - ya[perm[i] * d + k]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn predictions_are_distributions(seed in any::<u64>(), size in 1..4usize, lp in 1..6usize, lh in 1..6usize) {
        let model = Diin::<f32>::new(tiny_model_config(), seed).unwrap();
        let batch = model.probe_batch_seeded(size, lp, lh, seed ^ 1).unwrap();
        for p in model.predict_proba(&batch).unwrap() {
            prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

// ---- optim ----

/// Schedules whose smallest coefficient, `exp(-t_full/tau)` of the full
/// value, is still a normal f64.
fn l2() -> impl Strategy<Value = L2Schedule> {
    (1e-6..1e-3f64, 1.0..20_000f64, 0.0..1.0f64).prop_map(|(lambda_full, tau, frac)| L2Schedule {
        lambda_full,
        t_full: (frac * (600.0 * tau).min(200_000.0)) as u64,
        tau,
    })
}

fn policy() -> impl Strategy<Value = SwitchPolicy> {
    let kinds = prop::sample::select(vec![OptimKind::Adam, OptimKind::Adadelta, OptimKind::Sgd]);
    prop::collection::vec((kinds, 1..5usize), 1..4).prop_map(|stages| {
        let mut p = SwitchPolicy::default();
        let template = p.stages[0];
        p.stages = stages
            .into_iter()
            .map(|(optimizer, patience)| diin_core::optim::Stage {
                optimizer,
                patience,
                ..template
            })
            .collect();
        p
    })
}

proptest! {
    #[test]
    fn l2_is_monotone_and_saturates(s in l2(), a in 0..400_000u64, b in 0..400_000u64) {
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(s.coefficient(lo) <= s.coefficient(hi));
        prop_assert!(s.coefficient(lo) > 0.0);
        if lo >= s.t_full {
            prop_assert_eq!(s.coefficient(lo), s.lambda_full);
        }
    }

    #[test]
    fn l2_grows_by_e_per_tau(s in l2(), frac in 0.0..1.0f64) {
        let tau = s.tau.round().max(1.0);
        let s = L2Schedule { tau, ..s };
        prop_assume!(s.t_full as f64 > tau);
        let t = ((s.t_full as f64 - tau) * frac) as u64;
        let ratio = s.coefficient(t + tau as u64) / s.coefficient(t);
        prop_assert!((ratio / std::f64::consts::E - 1.0).abs() < 1e-12);
    }

    #[test]
    fn plateau_replay_is_pure_and_matches_tracker(p in policy(), losses in prop::collection::vec(0.0..1.0f64, 0..40)) {
        let mut tracker = PlateauTracker::new();
        for i in 1..=losses.len() {
            let incremental = tracker.observe(losses[i - 1], &p);
            let replay = plateau_decision(&losses[..i], &p);
            prop_assert_eq!(replay, plateau_decision(&losses[..i], &p));
            prop_assert_eq!(incremental, replay);
        }
    }

    #[test]
    fn stages_visit_a_prefix_in_order(p in policy(), losses in prop::collection::vec(0.0..1.0f64, 0..60)) {
        let mut tracker = PlateauTracker::new();
        let mut visited = vec![0];
        for &l in &losses {
            match tracker.observe(l, &p) {
                Decision::Advance(k) => {
                    prop_assert_eq!(k, visited.len());
                    visited.push(k);
                }
                Decision::Exhausted => prop_assert_eq!(visited.len(), p.stages.len()),
                Decision::Stay => {}
            }
        }
        prop_assert!(visited.len() <= p.stages.len());
    }

    #[test]
    fn second_moments_stay_nonnegative(
        kind in prop::sample::select(vec![OptimKind::Adadelta, OptimKind::Adam]),
        init in values(6),
        grads in prop::collection::vec(values(6), 1..12),
        lambda in 0.0..1e-2f64,
    ) {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::new(&[2, 3], init).unwrap()).unwrap();
        let mut opt = Optimizer::new(kind, 1e-2, &store);
        for g in grads {
            store.get_mut(id).grad = Some(Tensor::new(&[2, 3], g).unwrap());
            opt.step(&mut store, lambda).unwrap();
            prop_assert!(opt.min_second_moment() >= 0.0);
        }
    }
}

// ---- config and checkpoint ----

fn train_config() -> impl Strategy<Value = TrainConfig> {
    (
        (
            1..200usize,
            0..=i64::MAX as u64,
            0..1_000_000u64,
            prop::option::of(1..50u64),
        ),
        (1..100usize, 1..100usize, prop::option::of(1..1000usize)),
        (prop::option::of(1..5000u64), policy(), l2(), 0.0..0.9f64),
    )
        .prop_map(
            |((batch, seed, max_steps, epochs), (lp, lh, limit), (fixed, pol, l2, dropout))| {
                let mut c = TrainConfig::default();
                c.train.batch_size = batch;
                c.train.seed = seed;
                c.train.max_steps = max_steps;
                c.train.max_epochs = epochs;
                c.train.max_premise_len = lp;
                c.train.max_hypothesis_len = lh;
                c.train.train_limit = limit;
                c.train.eval = fixed.map_or(EvalMode::Adaptive, |interval| EvalMode::Fixed { interval });
                c.optim.stages = pol.stages;
                c.l2 = l2;
                c.model.dropout = dropout;
                c
            },
        )
}

proptest! {
    #[test]
    fn config_renders_and_parses_back(c in train_config()) {
        let text = c.to_toml();
        prop_assert_eq!(TrainConfig::from_toml(&text).unwrap(), c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn checkpoint_bytes_roundtrip_bitwise(seed in any::<u64>(), step in any::<u32>(), best in prop::option::of(0.0..1.0f64)) {
        let config = TrainConfig {
            model: tiny_model_config(),
            ..TrainConfig::default()
        };
        let model = Diin::<f32>::new(config.model.clone(), seed).unwrap();
        let state = TrainState {
            step: u64::from(step),
            best_accuracy: best,
            ..TrainState::default()
        };
        let ck = Checkpoint::capture(&model, None, &state, &config, &Vocab::new());
        let bytes = ck.encode();
        let back = Checkpoint::decode(&bytes).unwrap();
        prop_assert_eq!(&back.state, &state);
        prop_assert_eq!(&back.config, &config);
        prop_assert_eq!(back.tensors.len(), ck.tensors.len());
        for ((n, a), (m, b)) in ck.tensors.iter().zip(&back.tensors) {
            prop_assert_eq!(n, m);
            prop_assert_eq!(a.shape(), b.shape());
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(a), bits(b));
        }
        prop_assert_eq!(back.encode(), bytes);
    }
}
