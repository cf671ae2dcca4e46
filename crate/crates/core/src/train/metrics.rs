use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HEADER: &str = "step,split,loss,accuracy,optimizer,lr,lambda_l2,eval_interval";

/// One metrics row. `split` is `dev` for an evaluation and `switch` for a
/// stage transition; a switch row repeats the step and results of the
/// evaluation that triggered it and carries the new optimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub optimizer: String,
    pub lr: f64,
    pub lambda_l2: f64,
    /// Steps until the next evaluation, fixed when this row was written.
    pub eval_interval: u64,
}

pub struct MetricsLog {
    path: PathBuf,
    writer: csv::Writer<File>,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, e.into())
}

impl MetricsLog {
    /// Start a fresh log containing only the header.
    pub fn create(path: &Path) -> Result<Self> {
        fs::write(path, format!("{HEADER}\n")).map_err(|e| Error::io(path, e))?;
        Self::append(path)
    }

    /// Keep the rows with `step <= through` and continue after them.
    pub fn resume(path: &Path, through: u64) -> Result<Self> {
        let kept: Vec<MetricsRow> = if path.exists() {
            read_metrics(path)?.into_iter().filter(|r| r.step <= through).collect()
        } else {
            Vec::new()
        };
        let mut log = Self::create(path)?;
        for r in &kept {
            log.write(r)?;
        }
        Ok(log)
    }

    fn append(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(MetricsLog {
            path: path.to_path_buf(),
            writer: csv::WriterBuilder::new().has_headers(false).from_writer(file),
        })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.writer.serialize(row).map_err(|e| csv_err(&self.path, e))?;
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(String::from)
        .collect();
    if header.join(",") != HEADER {
        return Err(Error::Data {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("unexpected metrics header `{}`", header.join(",")),
        });
    }
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<MetricsRow>, _>>()
        .map_err(|e| csv_err(path, e))
}
