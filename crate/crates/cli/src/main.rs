use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use diin_core::autograd::{Fault, GradCheckConfig};
use diin_core::model::gradcheck::check_blocks;
use diin_core::model::LayerCensus;
use diin_core::text::{build_batch, featurize_frozen, Label, RawExample, UNK};
use diin_core::train::data::load_split;
use diin_core::train::{evaluate, train, Checkpoint, TrainConfig};
use diin_core::Error;

#[derive(Parser)]
#[command(
    name = "diin",
    version,
    about = "Train, evaluate and inspect a densely interactive inference network"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Dev,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Machine,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; artifacts go to the output directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_steps: Option<u64>,
        /// Continue from last.ckpt in the output directory if present.
        #[arg(long)]
        resume: bool,
    },
    /// Loss and accuracy of a checkpoint on a data split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long, value_enum, default_value = "dev")]
        split: Split,
    },
    /// Per-layer parameter counts for a config.
    Params {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Finite-difference check of every parameter tensor, in f64.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        corrupt_backward: bool,
    },
    /// Class probabilities for one sentence pair.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        premise: String,
        #[arg(long)]
        hypothesis: String,
    },
}

enum Failure {
    Check(String),
    Error(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Data { .. } | Error::Parse { .. } | Error::Io { .. } => 3,
        Error::Checkpoint(_) => 4,
        _ => 1,
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Error> {
    let ck = Checkpoint::load(path)?;
    ck.model()?;
    Ok(ck)
}

fn cmd_train(
    config: &Path,
    data_dir: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    max_steps: Option<u64>,
    resume: bool,
) -> Result<(), Failure> {
    let mut cfg = TrainConfig::load(config)?;
    if let Some(d) = data_dir {
        cfg.paths.data_dir = d;
    }
    if let Some(o) = out {
        cfg.paths.out_dir = o;
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(m) = max_steps {
        cfg.train.max_steps = m;
    }
    let s = train(&cfg, resume)?;
    let best = s
        .best_accuracy
        .map_or_else(|| "none".to_string(), |a| format!("{a:.6}"));
    println!(
        "steps={} evals={} stop={:?} best_accuracy={best}",
        s.steps, s.evals, s.stop
    );
    Ok(())
}

fn cmd_eval(checkpoint: &Path, data_dir: &Path, split: Split) -> Result<(), Failure> {
    let ck = load_checkpoint(checkpoint)?;
    let model = ck.model()?;
    let name = match split {
        Split::Dev => "dev",
        Split::Test => "test",
    };
    let (examples, _) = load_split(data_dir, name, &ck.vocab, None)?;
    let run = &ck.config.train;
    let r = evaluate(
        &model,
        &examples,
        run.batch_size,
        (run.max_premise_len, run.max_hypothesis_len),
    )?;
    println!("split={name} loss={:.6} accuracy={:.6}", r.loss, r.accuracy);
    Ok(())
}

fn cmd_params(config: &Path, format: Format) -> Result<(), Failure> {
    let cfg = TrainConfig::load(config)?;
    let census = LayerCensus::of(&cfg.model);
    match format {
        Format::Table => print!("{}", census.table()),
        Format::Machine => print!("{}", census.machine()),
    }
    Ok(())
}

fn cmd_gradcheck(config: &Path, seed: u64, corrupt: bool) -> Result<(), Failure> {
    let cfg = TrainConfig::load(config)?;
    let gc = GradCheckConfig {
        seed,
        fault: corrupt.then_some(Fault::ScaleReluGrad(1.5)),
        ..Default::default()
    };
    let reports = check_blocks(&cfg.model, seed, &gc)?;
    let mut failing = Vec::new();
    for r in &reports {
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!(
            "block={} tensors={} max_rel_error={:.3e} status={status}",
            r.block,
            r.params.len(),
            r.max_rel_error
        );
        for p in &r.params {
            println!(
                "  {} probes={} kinks={} max_rel_error={:.3e}",
                p.name,
                p.probes.len(),
                p.kinks,
                p.max_rel_error
            );
        }
        failing.extend(r.failing().map(|p| p.name.clone()));
    }
    if failing.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "gradient check failed for: {}",
            failing.join(", ")
        )))
    }
}

fn tokens(text: &str, what: &str) -> Result<Vec<String>, Error> {
    let t: Vec<String> = text.split_whitespace().map(String::from).collect();
    if t.is_empty() {
        return Err(Error::Config(format!("{what} is empty")));
    }
    Ok(t)
}

fn cmd_predict(checkpoint: &Path, premise: &str, hypothesis: &str) -> Result<(), Failure> {
    let premise_tokens = tokens(premise, "premise")?;
    let hypothesis_tokens = tokens(hypothesis, "hypothesis")?;
    let ck = load_checkpoint(checkpoint)?;
    let model = ck.model()?;
    let raw = RawExample {
        label: Label::Entailment,
        premise_pos: vec![String::new(); premise_tokens.len()],
        hypothesis_pos: vec![String::new(); hypothesis_tokens.len()],
        premise_tokens,
        hypothesis_tokens,
    };
    let mut ex = featurize_frozen(&raw, &ck.vocab);
    ex.premise.pos_ids.fill(UNK);
    ex.hypothesis.pos_ids.fill(UNK);
    let run = &ck.config.train;
    let batch = build_batch(&[&ex], run.max_premise_len, run.max_hypothesis_len)?;
    let p = model.predict_proba(&batch)?[0];
    let parts: Vec<String> = Label::ALL
        .iter()
        .map(|l| format!("{}={:.8}", l.name(), p[l.id()]))
        .collect();
    println!("{}", parts.join(" "));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            data_dir,
            out,
            seed,
            max_steps,
            resume,
        } => cmd_train(&config, data_dir, out, seed, max_steps, resume),
        Command::Eval {
            checkpoint,
            data_dir,
            split,
        } => cmd_eval(&checkpoint, &data_dir, split),
        Command::Params { config, format } => cmd_params(&config, format),
        Command::Gradcheck {
            config,
            seed,
            corrupt_backward,
        } => cmd_gradcheck(&config, seed, corrupt_backward),
        Command::Predict {
            checkpoint,
            premise,
            hypothesis,
        } => cmd_predict(&checkpoint, &premise, &hypothesis),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
