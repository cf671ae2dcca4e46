use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autograd::{ParamId, Tape};
use crate::error::{Error, Result};
use crate::model::{Diin, Dropout, LayerCensus};
use crate::optim::{Decision, Optimizer, PlateauTracker, SwitchPolicy};
use crate::text::embeddings::load_embeddings;
use crate::text::{build_batch, ProcessedExample, Vocab, MAX_WORD_CHARS};
use crate::train::checkpoint::{Checkpoint, TrainState};
use crate::train::config::TrainConfig;
use crate::train::data::{load_dataset, sized_for};
use crate::train::eval::{eval_interval, DatasetEvaluator, EvalResult, Evaluator};
use crate::train::metrics::{MetricsLog, MetricsRow};

pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const BEST_FILE: &str = "best.ckpt";
pub const LAST_FILE: &str = "last.ckpt";

const DROPOUT_KEY: u64 = 0x6a09_e667_f3bc_c908;

/// Permutation of `0..n` for one epoch, a pure function of `(seed, epoch)`.
pub fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

fn dropout_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ DROPOUT_KEY);
    rng.set_stream(step);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxSteps,
    MaxEpochs,
    /// The last optimizer stage ran out of patience.
    Exhausted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub steps: u64,
    pub evals: u64,
    pub stop: StopReason,
    pub best_accuracy: Option<f64>,
    /// Cross-entropy of the last training batch.
    pub last_loss: Option<f64>,
    /// `λ·Σw²/2` at the last training step.
    pub last_l2_penalty: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub lambda: f64,
    pub l2_penalty: f64,
}

#[derive(Serialize)]
struct CensusLine<'a> {
    name: &'a str,
    kind: &'a str,
    params: usize,
    out_shape: &'a str,
}

#[derive(Serialize)]
struct DatasetLine<'a> {
    file: &'a str,
    sha256: &'a str,
}

#[derive(Serialize)]
struct Manifest<'a> {
    seed: u64,
    total_params: usize,
    config: &'a TrainConfig,
    census: Vec<CensusLine<'a>>,
    datasets: Vec<DatasetLine<'a>>,
}

fn check_ids(examples: &[ProcessedExample], model: &Diin<f32>) -> Result<()> {
    let cfg = model.config();
    for (i, ex) in examples.iter().enumerate() {
        for side in [&ex.premise, &ex.hypothesis] {
            if side.is_empty() {
                return Err(Error::Config(format!("example {i} has an empty sentence")));
            }
            let bad = |what: &str, id: usize, limit: usize| {
                Error::Config(format!("example {i} uses {what} id {id} but the model has {limit}"))
            };
            if let Some(&id) = side.ids.iter().find(|&&id| id >= cfg.word_vocab) {
                return Err(bad("word", id, cfg.word_vocab));
            }
            if let Some(&id) = side
                .chars
                .iter()
                .flat_map(|r| r.iter())
                .find(|&&id| id >= cfg.char_vocab)
            {
                return Err(bad("char", id, cfg.char_vocab));
            }
            if let Some(&id) = side.pos_ids.iter().find(|&&id| id >= cfg.pos_vocab) {
                return Err(bad("POS", id, cfg.pos_vocab));
            }
            debug_assert!(side.chars.iter().all(|r| r.len() == MAX_WORD_CHARS));
        }
    }
    Ok(())
}

/// The training loop. Owns the model, optimizer and loop state; a single
/// value covers both fresh runs and resumed ones.
pub struct Trainer<E> {
    config: TrainConfig,
    vocab: Vocab,
    model: Diin<f32>,
    optimizer: Optimizer,
    policy: SwitchPolicy,
    train: Vec<ProcessedExample>,
    order: Vec<usize>,
    evaluator: E,
    state: TrainState,
    checksums: Vec<(String, String)>,
}

impl<E: Evaluator> Trainer<E> {
    pub fn new(
        config: TrainConfig,
        model: Diin<f32>,
        vocab: Vocab,
        train: Vec<ProcessedExample>,
        evaluator: E,
    ) -> Result<Self> {
        config.validate()?;
        if *model.config() != config.model {
            return Err(Error::Config("model does not match config.model".into()));
        }
        if train.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        check_ids(&train, &model)?;
        let policy = config.optim.policy();
        let first = policy.stages[0];
        let mut optimizer = Optimizer::new(first.optimizer, first.lr, model.params());
        optimizer.adadelta = config.optim.adadelta;
        optimizer.adam = config.optim.adam;
        let state = TrainState {
            next_eval: eval_interval(0.0, config.train.eval),
            plateau: PlateauTracker::new(),
            ..Default::default()
        };
        let order = epoch_order(config.train.seed, 0, train.len());
        Ok(Trainer {
            config,
            vocab,
            model,
            optimizer,
            policy,
            train,
            order,
            evaluator,
            state,
            checksums: Vec::new(),
        })
    }

    /// Fresh model initialized from `config.train.seed`.
    pub fn fresh(config: TrainConfig, vocab: Vocab, train: Vec<ProcessedExample>, evaluator: E) -> Result<Self> {
        let model = Diin::new(config.model.clone(), config.train.seed)?;
        Self::new(config, model, vocab, train, evaluator)
    }

    /// Continue from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(ck: Checkpoint, train: Vec<ProcessedExample>, evaluator: E) -> Result<Self> {
        let model = ck.model()?;
        let mut t = Self::new(ck.config.clone(), model, ck.vocab.clone(), train, evaluator)?;
        let stage = t
            .policy
            .stages
            .get(ck.state.stage)
            .copied()
            .ok_or_else(|| Error::Checkpoint(format!("stage {} is not configured", ck.state.stage)))?;
        t.optimizer.switch(stage.optimizer, stage.lr);
        t.optimizer.load_slots(&ck.optimizer_slots())?;
        t.optimizer.steps = ck.state.optimizer_steps;
        if ck.state.cursor > t.train.len() {
            return Err(Error::Checkpoint(
                "epoch cursor is past the end of the training set".into(),
            ));
        }
        t.order = epoch_order(t.config.train.seed, ck.state.epoch, t.train.len());
        t.state = ck.state;
        Ok(t)
    }

    pub fn set_checksums(&mut self, checksums: Vec<(String, String)>) {
        self.checksums = checksums;
    }

    pub fn set_max_steps(&mut self, max_steps: u64) {
        self.config.train.max_steps = max_steps;
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Diin<f32> {
        &self.model
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn optimizer(&self) -> &Optimizer {
        &self.optimizer
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn evaluator(&self) -> &E {
        &self.evaluator
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut state = self.state.clone();
        state.optimizer_steps = self.optimizer.steps;
        Checkpoint::capture(&self.model, Some(&self.optimizer), &state, &self.config, &self.vocab)
    }

    fn epochs_done(&self) -> u64 {
        self.state.epoch + u64::from(self.state.cursor >= self.train.len())
    }

    /// One parameter update on the next batch of the epoch permutation.
    pub fn step(&mut self) -> Result<StepStats> {
        let n = self.train.len();
        if self.state.cursor >= n {
            self.state.epoch += 1;
            self.state.cursor = 0;
            self.order = epoch_order(self.config.train.seed, self.state.epoch, n);
        }
        let run = &self.config.train;
        let end = (self.state.cursor + run.batch_size).min(n);
        let examples: Vec<&ProcessedExample> = self.order[self.state.cursor..end]
            .iter()
            .map(|&i| &self.train[i])
            .collect();
        let batch = build_batch(&examples, run.max_premise_len, run.max_hypothesis_len)?;

        let (loss, grads) = {
            let mut tape = Tape::new();
            let bound = self.model.bind(&mut tape, true);
            let mut rng = dropout_rng(run.seed, self.state.step);
            let rate = self.model.config().dropout;
            let mut drop = if rate > 0.0 {
                Dropout::on(rate, &mut rng)
            } else {
                Dropout::off()
            };
            let (loss, _) = self.model.loss(&mut tape, &bound, &batch, &mut drop)?;
            let g = tape.backward(loss)?;
            let grads: Vec<(ParamId, Vec<f32>)> = tape
                .param_grads(&g)
                .into_iter()
                .map(|(id, s)| (id, s.to_vec()))
                .collect();
            (tape.value(loss).item() as f64, grads)
        };

        let store = self.model.params_mut();
        store.zero_grads();
        for (id, g) in &grads {
            store.accumulate_grad(*id, g);
        }
        let lambda = self.config.l2.coefficient(self.state.step);
        self.optimizer.step(store, lambda)?;
        store.zero_grads();
        self.state.step += 1;
        self.state.cursor = end;
        Ok(StepStats {
            loss,
            lambda,
            l2_penalty: lambda * self.model.params().sum_sq() / 2.0,
        })
    }

    fn evaluate_now(&mut self, out: &Path, log: &mut MetricsLog) -> Result<EvalResult> {
        let step = self.state.step;
        let r = self.evaluator.evaluate(&self.model, step)?;
        self.state.evals += 1;
        if self.state.best_accuracy.is_none_or(|b| r.accuracy > b) {
            self.state.best_accuracy = Some(r.accuracy);
            self.state.best_step = Some(step);
            Checkpoint::capture(&self.model, None, &self.state, &self.config, &self.vocab)
                .save(&out.join(BEST_FILE))?;
        }
        let interval = eval_interval(self.state.best_accuracy.unwrap_or(0.0), self.config.train.eval);
        self.state.next_eval = step + interval;
        let lambda = self.config.l2.coefficient(step);
        let mut row = MetricsRow {
            step,
            split: "dev".into(),
            loss: r.loss,
            accuracy: r.accuracy,
            optimizer: self.optimizer.kind.to_string(),
            lr: self.optimizer.lr,
            lambda_l2: lambda,
            eval_interval: interval,
        };
        log.write(&row)?;
        if let Decision::Advance(k) = self.state.plateau.observe(r.loss, &self.policy) {
            let stage = self.policy.stages[k];
            self.state.stage = k;
            self.optimizer.switch(stage.optimizer, stage.lr);
            row.split = "switch".into();
            row.optimizer = stage.optimizer.to_string();
            row.lr = stage.lr;
            log.write(&row)?;
        }
        Ok(r)
    }

    fn write_manifest(&self, out: &Path) -> Result<()> {
        let census = LayerCensus::of(self.model.config());
        let manifest = Manifest {
            seed: self.config.train.seed,
            total_params: census.total_params,
            config: &self.config,
            census: census
                .entries
                .iter()
                .map(|e| CensusLine {
                    name: &e.name,
                    kind: e.kind,
                    params: e.params,
                    out_shape: &e.out_shape,
                })
                .collect(),
            datasets: self
                .checksums
                .iter()
                .map(|(f, h)| DatasetLine { file: f, sha256: h })
                .collect(),
        };
        let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
        let path = out.join(MANIFEST_FILE);
        fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    /// Train until the step budget, the epoch budget or the optimizer
    /// schedule runs out, writing metrics, manifest and checkpoints to
    /// `out`. A resumed trainer keeps the log rows up to its step.
    pub fn run(&mut self, out: &Path) -> Result<RunSummary> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let metrics_path = out.join(METRICS_FILE);
        let mut log = if self.state.step == 0 {
            MetricsLog::create(&metrics_path)?
        } else {
            MetricsLog::resume(&metrics_path, self.state.step)?
        };
        self.write_manifest(out)?;
        let mut last: Option<StepStats> = None;
        let stop = loop {
            if self.state.plateau.exhausted {
                break StopReason::Exhausted;
            }
            if self.state.step >= self.config.train.max_steps {
                break StopReason::MaxSteps;
            }
            if self.config.train.max_epochs.is_some_and(|m| self.epochs_done() >= m) {
                break StopReason::MaxEpochs;
            }
            last = Some(self.step()?);
            if self.state.step == self.state.next_eval {
                self.evaluate_now(out, &mut log)?;
                self.checkpoint().save(&out.join(LAST_FILE))?;
            }
        };
        self.checkpoint().save(&out.join(LAST_FILE))?;
        let best = out.join(BEST_FILE);
        if !best.exists() {
            Checkpoint::capture(&self.model, None, &self.state, &self.config, &self.vocab).save(&best)?;
        }
        Ok(RunSummary {
            steps: self.state.step,
            evals: self.state.evals,
            stop,
            best_accuracy: self.state.best_accuracy,
            last_loss: last.map(|s| s.loss),
            last_l2_penalty: last.map(|s| s.l2_penalty),
        })
    }
}

/// Paths of the artifacts a run writes under its output directory.
pub fn artifact_paths(out: &Path) -> [PathBuf; 4] {
    [BEST_FILE, LAST_FILE, METRICS_FILE, MANIFEST_FILE].map(|f| out.join(f))
}

/// Load data per `config`, build (or resume) the model and train. With
/// `resume`, an existing `last.ckpt` in the output directory is continued
/// with `config.train.max_steps` as the new budget.
pub fn train(config: &TrainConfig, resume: bool) -> Result<RunSummary> {
    config.validate()?;
    let ds = load_dataset(&config.paths.data_dir, config.train.train_limit, config.train.dev_limit)?;
    let out = config.paths.out_dir.clone();
    let last = out.join(LAST_FILE);
    let evaluator = |cfg: &TrainConfig, dev| DatasetEvaluator {
        examples: dev,
        batch_size: cfg.train.batch_size,
        caps: (cfg.train.max_premise_len, cfg.train.max_hypothesis_len),
    };
    let mut trainer = if resume && last.exists() {
        let ck = Checkpoint::load(&last)?;
        if ck.vocab != ds.vocab {
            return Err(Error::Checkpoint(format!(
                "{}: vocabulary differs from the training data",
                last.display()
            )));
        }
        let ev = evaluator(&ck.config, ds.dev);
        let mut t = Trainer::resume(ck, ds.train, ev)?;
        t.set_max_steps(config.train.max_steps);
        t
    } else {
        let mut cfg = config.clone();
        cfg.model = sized_for(&config.model, &ds.vocab);
        let mut model = Diin::<f32>::new(cfg.model.clone(), cfg.train.seed)?;
        if let Some(path) = &cfg.paths.embeddings {
            let table = load_embeddings(path, cfg.model.word_dim, Some(&ds.vocab.words))?;
            model.load_pretrained(&ds.vocab.words, &table)?;
        }
        let ev = evaluator(&cfg, ds.dev);
        Trainer::new(cfg, model, ds.vocab, ds.train, ev)?
    };
    trainer.set_checksums(ds.checksums);
    trainer.run(&out)
}
