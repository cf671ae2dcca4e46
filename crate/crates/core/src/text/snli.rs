use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::text::parse::extract_pos;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Entailment = 0,
    Contradiction = 1,
    Neutral = 2,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Entailment, Label::Contradiction, Label::Neutral];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Label> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Entailment => "entailment",
            Label::Contradiction => "contradiction",
            Label::Neutral => "neutral",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "entailment" => Ok(Label::Entailment),
            "contradiction" => Ok(Label::Contradiction),
            "neutral" => Ok(Label::Neutral),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

/// One labeled premise/hypothesis pair with parse-derived POS tags.
#[derive(Clone, Debug, PartialEq)]
pub struct RawExample {
    pub label: Label,
    pub premise_tokens: Vec<String>,
    pub hypothesis_tokens: Vec<String>,
    pub premise_pos: Vec<String>,
    pub hypothesis_pos: Vec<String>,
}

impl RawExample {
    /// Pair from pre-tokenized sentences and tags. Panics if the tags do not
    /// align with the tokens.
    pub fn new(label: Label, premise: &[(&str, &str)], hypothesis: &[(&str, &str)]) -> Self {
        let split = |s: &[(&str, &str)]| -> (Vec<String>, Vec<String>) {
            s.iter().map(|(t, p)| (t.to_string(), p.to_string())).unzip()
        };
        let (premise_tokens, premise_pos) = split(premise);
        let (hypothesis_tokens, hypothesis_pos) = split(hypothesis);
        RawExample {
            label,
            premise_tokens,
            hypothesis_tokens,
            premise_pos,
            hypothesis_pos,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReadStats {
    pub kept: usize,
    pub skipped: usize,
}

#[derive(Deserialize)]
struct Record {
    gold_label: String,
    sentence1_parse: String,
    sentence2_parse: String,
}

fn sentence(parse: &str) -> Result<(Vec<String>, Vec<String>), String> {
    let leaves = extract_pos(parse).map_err(|e| e.to_string())?;
    if leaves.is_empty() {
        return Err("parse has no leaves".into());
    }
    Ok(leaves.into_iter().map(|l| (l.token, l.pos)).unzip())
}

/// Parse one line of an SNLI-format file. `Ok(None)` means the line carries
/// no gold label (`"-"`) and is skipped.
pub fn parse_snli_line(line: &str) -> Result<Option<RawExample>, String> {
    let rec: Record = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if rec.gold_label == "-" {
        return Ok(None);
    }
    let label = rec.gold_label.parse()?;
    let (premise_tokens, premise_pos) = sentence(&rec.sentence1_parse)?;
    let (hypothesis_tokens, hypothesis_pos) = sentence(&rec.sentence2_parse)?;
    Ok(Some(RawExample {
        label,
        premise_tokens,
        hypothesis_tokens,
        premise_pos,
        hypothesis_pos,
    }))
}

/// Read a line-delimited SNLI file, keeping at most `max_examples` labeled
/// pairs. Blank lines are ignored.
pub fn read_snli_jsonl(path: &Path, max_examples: Option<usize>) -> Result<(Vec<RawExample>, ReadStats)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut stats = ReadStats::default();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        if max_examples.is_some_and(|m| out.len() >= m) {
            break;
        }
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_snli_line(&line) {
            Ok(Some(ex)) => {
                stats.kept += 1;
                out.push(ex);
            }
            Ok(None) => stats.skipped += 1,
            Err(msg) => {
                return Err(Error::Data {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg,
                })
            }
        }
    }
    Ok((out, stats))
}
