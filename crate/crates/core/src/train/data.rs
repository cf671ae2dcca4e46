//! Dataset files on disk and small synthetic corpora.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::text::{featurize_all, featurize_frozen, read_snli_jsonl, Label, ProcessedExample, RawExample, Vocab};

/// Featurized train and dev sets with the vocabulary built from train.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<ProcessedExample>,
    pub dev: Vec<ProcessedExample>,
    pub vocab: Vocab,
    /// `(file name, sha256 hex)` of each file read.
    pub checksums: Vec<(String, String)>,
}

/// `<dir>/<split>.jsonl`, falling back to the SNLI release name
/// `<dir>/snli_1.0_<split>.jsonl`.
pub fn split_path(dir: &Path, split: &str) -> Result<PathBuf> {
    let short = dir.join(format!("{split}.jsonl"));
    for p in [short.clone(), dir.join(format!("snli_1.0_{split}.jsonl"))] {
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::io(
        short,
        io::Error::new(io::ErrorKind::NotFound, "split file not found"),
    ))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn nonempty(path: &Path, examples: &[RawExample]) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::Data {
            path: path.to_path_buf(),
            line: 0,
            msg: "no labeled examples".into(),
        });
    }
    Ok(())
}

/// Read one split against a frozen vocabulary.
pub fn load_split(
    dir: &Path,
    split: &str,
    vocab: &Vocab,
    limit: Option<usize>,
) -> Result<(Vec<ProcessedExample>, PathBuf)> {
    let path = split_path(dir, split)?;
    let (raw, _) = read_snli_jsonl(&path, limit)?;
    nonempty(&path, &raw)?;
    Ok((raw.iter().map(|r| featurize_frozen(r, vocab)).collect(), path))
}

pub fn load_dataset(dir: &Path, train_limit: Option<usize>, dev_limit: Option<usize>) -> Result<Dataset> {
    let train_path = split_path(dir, "train")?;
    let (raw, _) = read_snli_jsonl(&train_path, train_limit)?;
    nonempty(&train_path, &raw)?;
    let mut vocab = Vocab::new();
    let train = featurize_all(&raw, &mut vocab);
    let (dev, dev_path) = load_split(dir, "dev", &vocab, dev_limit)?;
    let checksums = [&train_path, &dev_path]
        .into_iter()
        .map(|p| Ok((file_name(p), sha256_file(p)?)))
        .collect::<Result<_>>()?;
    Ok(Dataset {
        train,
        dev,
        vocab,
        checksums,
    })
}

/// Copy of `model` with its vocabulary sizes taken from `vocab`.
pub fn sized_for(model: &ModelConfig, vocab: &Vocab) -> ModelConfig {
    ModelConfig {
        word_vocab: vocab.words.len(),
        char_vocab: vocab.chars.len(),
        pos_vocab: vocab.pos.len(),
        ..model.clone()
    }
}

const TAGS: [&str; 6] = ["DT", "NN", "VBZ", "JJ", "IN", "NNS"];

fn lexicon() -> Vec<String> {
    let onsets = [
        "b", "d", "f", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "gr", "st", "pl",
    ];
    let vowels = ["a", "e", "i", "o", "u"];
    let codas = ["", "n", "x"];
    let mut words = Vec::new();
    for o in onsets {
        for v in vowels {
            for c in codas {
                words.push(format!("{o}{v}{c}"));
            }
        }
    }
    words.truncate(200);
    words
}

/// `n` random labeled pairs over a 200-word made-up lexicon, labels
/// cycling through the three classes. Hypotheses reuse some premise words.
pub fn synthetic_raw(n: usize, seed: u64) -> Vec<RawExample> {
    let words = lexicon();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let plen = rng.gen_range(4..=9);
            let premise: Vec<(String, String)> = (0..plen)
                .map(|_| {
                    (
                        words.choose(&mut rng).unwrap().clone(),
                        TAGS.choose(&mut rng).unwrap().to_string(),
                    )
                })
                .collect();
            let hlen = rng.gen_range(3..=7);
            let hypothesis: Vec<(String, String)> = (0..hlen)
                .map(|_| {
                    if rng.gen_bool(0.3) {
                        premise.choose(&mut rng).unwrap().clone()
                    } else {
                        (
                            words.choose(&mut rng).unwrap().clone(),
                            TAGS.choose(&mut rng).unwrap().to_string(),
                        )
                    }
                })
                .collect();
            let (premise_tokens, premise_pos) = premise.into_iter().unzip();
            let (hypothesis_tokens, hypothesis_pos) = hypothesis.into_iter().unzip();
            RawExample {
                label: Label::ALL[i % 3],
                premise_tokens,
                hypothesis_tokens,
                premise_pos,
                hypothesis_pos,
            }
        })
        .collect()
}

/// [`synthetic_raw`] featurized with a fresh vocabulary; ids fit any config
/// with at least 202 words, 28 chars and 8 POS tags (the toy config does).
pub fn synthetic_pairs(n: usize, seed: u64, cfg: &ModelConfig) -> Vec<ProcessedExample> {
    let mut vocab = Vocab::new();
    let out = featurize_all(&synthetic_raw(n, seed), &mut vocab);
    assert!(
        vocab.words.len() <= cfg.word_vocab && vocab.chars.len() <= cfg.char_vocab && vocab.pos.len() <= cfg.pos_vocab,
        "synthetic vocabulary does not fit the model config"
    );
    out
}

fn render_parse(tokens: &[String], tags: &[String]) -> String {
    let leaves: Vec<String> = tokens.iter().zip(tags).map(|(t, p)| format!("({p} {t})")).collect();
    format!("(ROOT (S {}))", leaves.join(" "))
}

/// Write pairs in the SNLI line format (only the fields the reader uses,
/// plus the plain sentences).
pub fn write_snli_jsonl(path: &Path, examples: &[RawExample]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ex in examples {
        let line = serde_json::json!({
            "gold_label": ex.label.name(),
            "sentence1": ex.premise_tokens.join(" "),
            "sentence2": ex.hypothesis_tokens.join(" "),
            "sentence1_parse": render_parse(&ex.premise_tokens, &ex.premise_pos),
            "sentence2_parse": render_parse(&ex.hypothesis_tokens, &ex.hypothesis_pos),
        });
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_deterministic_and_balanced() {
        let a = synthetic_raw(30, 4);
        assert_eq!(a, synthetic_raw(30, 4));
        assert_ne!(a, synthetic_raw(30, 5));
        for k in 0..3 {
            assert_eq!(a.iter().filter(|e| e.label.id() == k).count(), 10);
        }
    }

    #[test]
    fn jsonl_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let raw = synthetic_raw(9, 1);
        write_snli_jsonl(&dir.path().join("train.jsonl"), &raw).unwrap();
        write_snli_jsonl(&dir.path().join("snli_1.0_dev.jsonl"), &raw[..3]).unwrap();
        let (back, stats) = read_snli_jsonl(&split_path(dir.path(), "train").unwrap(), None).unwrap();
        assert_eq!(back, raw);
        assert_eq!(stats.kept, 9);
        let ds = load_dataset(dir.path(), None, Some(2)).unwrap();
        assert_eq!((ds.train.len(), ds.dev.len()), (9, 2));
        assert_eq!(ds.checksums[1].0, "snli_1.0_dev.jsonl");
        assert_eq!(ds.checksums[0].1.len(), 64);
    }

    #[test]
    fn missing_split_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        match split_path(dir.path(), "test") {
            Err(Error::Io { path, .. }) => assert!(path.ends_with("test.jsonl")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sized_config_matches_vocab() {
        let mut vocab = Vocab::new();
        featurize_all(&synthetic_raw(20, 0), &mut vocab);
        let cfg = sized_for(&ModelConfig::toy(), &vocab);
        assert_eq!(cfg.word_vocab, vocab.words.len());
        assert_eq!(cfg.pos_vocab, 8);
        assert!(cfg.validate().is_ok());
    }
}
