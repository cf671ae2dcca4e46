//! Plain-text word vectors: one `token v1 … vd` entry per line.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::text::vocab::Index;

#[derive(Clone, Debug, Default)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub vectors: HashMap<String, Vec<f32>>,
}

impl EmbeddingTable {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f32]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    /// Fraction of the (non-reserved) vocabulary entries that have a vector.
    pub fn coverage(&self, words: &Index) -> f64 {
        let total = words.entries().count();
        if total == 0 {
            return 0.0;
        }
        let found = words.entries().filter(|(w, _)| self.vectors.contains_key(*w)).count();
        found as f64 / total as f64
    }
}

/// Load vectors of width `dim`. When `only` is given, entries for words not
/// in it are parsed for validity but not kept.
pub fn load_embeddings(path: &Path, dim: usize, only: Option<&Index>) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut table = EmbeddingTable {
        dim,
        vectors: HashMap::new(),
    };
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let data_err = |msg: String| Error::Data {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let mut fields = line.split_whitespace();
        let word = fields.next().expect("non-empty line");
        let values = fields
            .map(|f| f.parse::<f32>().map_err(|e| data_err(format!("`{f}`: {e}"))))
            .collect::<Result<Vec<f32>>>()?;
        if values.len() != dim {
            return Err(data_err(format!("expected {dim} components, found {}", values.len())));
        }
        if only.is_none_or(|idx| idx.contains(word)) {
            table.vectors.insert(word.to_string(), values);
        }
    }
    Ok(table)
}
