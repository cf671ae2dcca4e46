mod common;

use std::fs;

use common::*;
use diin_core::train::{read_metrics, EvalMode, BEST_FILE, LAST_FILE, MANIFEST_FILE, METRICS_FILE};
use regex::Regex;

/// A toy workspace: data, a config evaluating every 5 steps, and an
/// output directory inside it.
struct Workspace {
    dir: tempfile::TempDir,
    config: String,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        write_data(&dir.path().join("data"), 40, 20);
        let mut cfg = toy_config();
        cfg.train.eval = EvalMode::Fixed { interval: 5 };
        cfg.paths.data_dir = dir.path().join("data");
        cfg.paths.out_dir = dir.path().join("out");
        let config = write_config(&dir.path().join("run.toml"), &cfg);
        Workspace { dir, config }
    }

    fn out(&self) -> std::path::PathBuf {
        self.dir.path().join("out")
    }

    fn train(&self, extra: &[&str]) -> std::process::Output {
        let mut args = vec!["train", "--config", &self.config];
        args.extend_from_slice(extra);
        diin(&args)
    }
}

#[test]
fn train_writes_artifacts_only_under_out() {
    let ws = Workspace::new();
    let out = ws.train(&["--max-steps", "10"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let line = Regex::new(r"^steps=10 evals=2 stop=MaxSteps best_accuracy=\d\.\d{6}\n$").unwrap();
    assert!(line.is_match(&stdout(&out)), "{}", stdout(&out));
    for f in [BEST_FILE, LAST_FILE, METRICS_FILE, MANIFEST_FILE] {
        assert!(ws.out().join(f).is_file(), "{f}");
    }
    let mut entries: Vec<String> = fs::read_dir(ws.dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    entries.sort();
    assert_eq!(entries, ["data", "out", "run.toml"]);
    let manifest = fs::read_to_string(ws.out().join(MANIFEST_FILE)).unwrap();
    for key in ["seed", "total_params", "train.jsonl", "dev.jsonl", "embed/char_cnn"] {
        assert!(manifest.contains(key), "{key}");
    }
}

#[test]
fn same_seed_gives_identical_metrics() {
    let (a, b) = (Workspace::new(), Workspace::new());
    for ws in [&a, &b] {
        assert_eq!(code(&ws.train(&["--max-steps", "15", "--seed", "7"])), 0);
    }
    let read = |ws: &Workspace| fs::read(ws.out().join(METRICS_FILE)).unwrap();
    assert_eq!(read(&a), read(&b));
    let rows = read_metrics(&a.out().join(METRICS_FILE)).unwrap();
    assert_eq!(rows.iter().map(|r| r.step).collect::<Vec<_>>(), [5, 10, 15]);
}

#[test]
fn resume_through_the_command_line_continues_the_log() {
    let (whole, split) = (Workspace::new(), Workspace::new());
    assert_eq!(code(&whole.train(&["--max-steps", "20"])), 0);
    assert_eq!(code(&split.train(&["--max-steps", "10"])), 0);
    let out = split.train(&["--max-steps", "20", "--resume"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).starts_with("steps=20 "));
    let read = |ws: &Workspace| fs::read_to_string(ws.out().join(METRICS_FILE)).unwrap();
    assert_eq!(read(&whole), read(&split));
}

#[test]
fn eval_reports_loss_and_accuracy() {
    let ws = Workspace::new();
    assert_eq!(code(&ws.train(&["--max-steps", "5"])), 0);
    let ck = ws.out().join(BEST_FILE);
    let data = ws.dir.path().join("data");
    let out = diin(&["eval", "--checkpoint", s(&ck), "--data-dir", s(&data), "--split", "dev"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let line = Regex::new(r"^split=dev loss=\d+\.\d{6} accuracy=(\d\.\d{6})\n$").unwrap();
    let text = stdout(&out);
    let caps = line.captures(&text).unwrap_or_else(|| panic!("{text}"));
    let acc: f64 = caps[1].parse().unwrap();
    // 20 dev examples: accuracy is a multiple of 1/20.
    assert!((acc * 20.0 - (acc * 20.0).round()).abs() < 1e-4);

    let missing = diin(&[
        "eval",
        "--checkpoint",
        s(&ck),
        "--data-dir",
        s(&data),
        "--split",
        "test",
    ]);
    assert_eq!(code(&missing), 3, "{}", stderr(&missing));
}

#[test]
fn damaged_checkpoints_exit_with_4() {
    let ws = Workspace::new();
    assert_eq!(code(&ws.train(&["--max-steps", "5"])), 0);
    let data = ws.dir.path().join("data");
    let bytes = fs::read(ws.out().join(LAST_FILE)).unwrap();
    let truncated = ws.dir.path().join("truncated.ckpt");
    fs::write(&truncated, &bytes[..bytes.len() / 2]).unwrap();
    let garbage = ws.dir.path().join("garbage.ckpt");
    fs::write(&garbage, b"not a checkpoint at all").unwrap();
    for ck in [&truncated, &garbage] {
        let out = diin(&["eval", "--checkpoint", s(ck), "--data-dir", s(&data)]);
        assert_eq!(code(&out), 4, "{}", stderr(&out));
        let out = diin(&[
            "predict",
            "--checkpoint",
            s(ck),
            "--premise",
            "a dog",
            "--hypothesis",
            "a cat",
        ]);
        assert_eq!(code(&out), 4, "{}", stderr(&out));
    }
}

fn probabilities(text: &str) -> [f64; 3] {
    let line = Regex::new(r"^entailment=(\d\.\d{8}) contradiction=(\d\.\d{8}) neutral=(\d\.\d{8})\n$").unwrap();
    let c = line.captures(text).unwrap_or_else(|| panic!("{text}"));
    [1, 2, 3].map(|i| c[i].parse().unwrap())
}

#[test]
fn predict_prints_a_distribution() {
    let ws = Workspace::new();
    assert_eq!(code(&ws.train(&["--max-steps", "5"])), 0);
    let ck = ws.out().join(BEST_FILE);
    for (p, h) in [
        ("a dog runs", "a dog runs"),
        ("The man sleeps", "zzz unseen words here"),
        ("x", "y"),
    ] {
        let out = diin(&["predict", "--checkpoint", s(&ck), "--premise", p, "--hypothesis", h]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let probs = probabilities(&stdout(&out));
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6, "{probs:?}");
    }
    let predict = |p: &str, h: &str| {
        probabilities(&stdout(&diin(&[
            "predict",
            "--checkpoint",
            s(&ck),
            "--premise",
            p,
            "--hypothesis",
            h,
        ])))
    };
    assert_ne!(
        predict("a dog runs in the park", "a cat sleeps"),
        predict("a cat sleeps", "a dog runs in the park")
    );
    for (p, h) in [("", "a dog"), ("a dog", "   ")] {
        let out = diin(&["predict", "--checkpoint", s(&ck), "--premise", p, "--hypothesis", h]);
        assert_eq!(code(&out), 2, "{}", stderr(&out));
    }
}

#[test]
fn params_is_deterministic_in_both_formats() {
    let config = repo_file("configs/toy.toml");
    let machine = diin(&["params", "--config", s(&config), "--format", "machine"]);
    assert_eq!(code(&machine), 0);
    assert_eq!(
        machine.stdout,
        diin(&["params", "--config", s(&config), "--format", "machine"]).stdout
    );
    let text = stdout(&machine);
    let last = text.lines().last().unwrap();
    assert!(Regex::new(r"^TOTAL,\d+$").unwrap().is_match(last));
    let sum: usize = text
        .lines()
        .filter(|l| !l.starts_with("TOTAL"))
        .map(|l| l.split(',').nth(2).unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(format!("TOTAL,{sum}"), last);

    let table = diin(&["params", "--config", s(&config)]);
    assert_eq!(code(&table), 0);
    let t = stdout(&table);
    assert!(t.lines().next().unwrap().starts_with("layer"));
    assert!(t.lines().last().unwrap().contains(&sum.to_string()));
}

#[test]
fn gradcheck_passes_and_catches_a_corrupted_backward() {
    let config = repo_file("configs/toy.toml");
    let ok = diin(&["gradcheck", "--config", s(&config)]);
    assert_eq!(code(&ok), 0, "{}", stdout(&ok));
    let block = Regex::new(r"^block=\S+ tensors=\d+ max_rel_error=\S+ status=ok$").unwrap();
    assert!(stdout(&ok)
        .lines()
        .filter(|l| !l.starts_with("  "))
        .all(|l| block.is_match(l)));

    let bad = diin(&["gradcheck", "--config", s(&config), "--corrupt-backward"]);
    assert_eq!(code(&bad), 1);
    assert!(stdout(&bad).contains("status=FAIL"));
    assert!(stderr(&bad).contains("gradient check failed for:"));
}

#[test]
fn configuration_and_data_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    assert_eq!(code(&diin(&["params", "--config", s(&missing)])), 2);
    assert_eq!(code(&diin(&["train", "--config", s(&missing)])), 2);

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[train]\nbatchsize = 3\n").unwrap();
    let out = diin(&["gradcheck", "--config", s(&bad)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("bad.toml"));

    let mut cfg = toy_config();
    cfg.paths.data_dir = dir.path().join("no_data");
    cfg.paths.out_dir = dir.path().join("out");
    let config = write_config(&dir.path().join("run.toml"), &cfg);
    assert_eq!(code(&diin(&["train", "--config", &config])), 3);

    fs::create_dir_all(dir.path().join("broken")).unwrap();
    fs::write(dir.path().join("broken/train.jsonl"), "{not json\n").unwrap();
    fs::write(dir.path().join("broken/dev.jsonl"), "").unwrap();
    let out = diin(&[
        "train",
        "--config",
        &config,
        "--data-dir",
        s(&dir.path().join("broken")),
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));

    assert_eq!(code(&diin(&["frobnicate"])), 2);
}
