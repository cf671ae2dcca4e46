#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use diin_core::train::data::{synthetic_raw, write_snli_jsonl};
use diin_core::train::TrainConfig;

pub fn diin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diin"))
        .args(args)
        .output()
        .expect("spawn diin")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

pub fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

pub fn toy_config() -> TrainConfig {
    TrainConfig::load(&repo_file("configs/toy.toml")).unwrap()
}

/// Synthetic `train.jsonl` and `dev.jsonl` under `dir`.
pub fn write_data(dir: &Path, train: usize, dev: usize) {
    std::fs::create_dir_all(dir).unwrap();
    write_snli_jsonl(&dir.join("train.jsonl"), &synthetic_raw(train, 1)).unwrap();
    write_snli_jsonl(&dir.join("dev.jsonl"), &synthetic_raw(dev, 2)).unwrap();
}

pub fn write_config(path: &Path, cfg: &TrainConfig) -> String {
    std::fs::write(path, cfg.to_toml()).unwrap();
    path.to_str().unwrap().to_string()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
