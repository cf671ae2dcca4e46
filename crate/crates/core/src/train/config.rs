use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::optim::{AdadeltaHyper, AdamHyper, L2Schedule, SwitchPolicy};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum EvalMode {
    Fixed {
        interval: u64,
    },
    /// 1000 steps below 0.70 best dev accuracy, 500 below 0.80, then 250.
    Adaptive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub batch_size: usize,
    pub max_steps: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<u64>,
    pub seed: u64,
    pub max_premise_len: usize,
    pub max_hypothesis_len: usize,
    /// Keep only the first N labeled training / dev pairs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_limit: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_limit: Option<usize>,
    pub eval: EvalMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            batch_size: 70,
            max_steps: 400_000,
            max_epochs: None,
            seed: 0,
            max_premise_len: 48,
            max_hypothesis_len: 48,
            train_limit: None,
            dev_limit: None,
            eval: EvalMode::Adaptive,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data_dir: PathBuf::from("data/snli_1.0"),
            embeddings: None,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub stages: Vec<crate::optim::Stage>,
    pub adadelta: AdadeltaHyper,
    pub adam: AdamHyper,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            stages: SwitchPolicy::default().stages,
            adadelta: AdadeltaHyper::default(),
            adam: AdamHyper::default(),
        }
    }
}

impl OptimConfig {
    pub fn policy(&self) -> SwitchPolicy {
        SwitchPolicy {
            stages: self.stages.clone(),
        }
    }
}

/// Everything a run needs, as read from one TOML document.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub train: RunConfig,
    pub paths: Paths,
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub l2: L2Schedule,
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        if t.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if t.max_premise_len == 0 || t.max_hypothesis_len == 0 {
            return Err(Error::Config("sentence length caps must be positive".into()));
        }
        if let EvalMode::Fixed { interval: 0 } = t.eval {
            return Err(Error::Config("train.eval.interval must be positive".into()));
        }
        if t.max_epochs == Some(0) {
            return Err(Error::Config("train.max_epochs must be positive when set".into()));
        }
        self.model.validate()?;
        self.optim.policy().validate()?;
        self.l2.validate()?;
        // TOML integers are signed 64-bit; the config is embedded in every
        // checkpoint and manifest.
        toml::to_string(self)
            .map(|_| ())
            .map_err(|e| Error::Config(format!("config cannot be written as TOML: {e}")))
    }
}
