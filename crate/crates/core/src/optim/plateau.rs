use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::OptimKind;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub optimizer: OptimKind,
    pub lr: f64,
    /// Consecutive non-improving evaluations that end this stage.
    pub patience: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchPolicy {
    pub stages: Vec<Stage>,
}

impl Default for SwitchPolicy {
    fn default() -> Self {
        SwitchPolicy {
            stages: vec![
                Stage {
                    optimizer: OptimKind::Adam,
                    lr: 1e-3,
                    patience: 3,
                },
                Stage {
                    optimizer: OptimKind::Adadelta,
                    lr: 0.5,
                    patience: 4,
                },
                Stage {
                    optimizer: OptimKind::Sgd,
                    lr: 0.1,
                    patience: 5,
                },
            ],
        }
    }
}

impl SwitchPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("optimizer policy needs at least one stage".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.patience == 0 {
                return Err(Error::Config(format!("stage {i}: patience must be positive")));
            }
            if !(s.lr > 0.0 && s.lr.is_finite()) {
                return Err(Error::Config(format!(
                    "stage {i}: learning rate must be positive, got {}",
                    s.lr
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Stay,
    /// Move to the stage with this index.
    Advance(usize),
    /// The final stage ran out of patience.
    Exhausted,
}

/// Incremental form of [`plateau_decision`]. A stage's reference loss is
/// the best seen since entering it, so the first evaluation in a stage
/// always counts as an improvement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauTracker {
    pub stage: usize,
    pub best: Option<f64>,
    pub bad_evals: usize,
    pub exhausted: bool,
}

impl PlateauTracker {
    pub fn new() -> Self {
        PlateauTracker {
            stage: 0,
            best: None,
            bad_evals: 0,
            exhausted: false,
        }
    }

    pub fn observe(&mut self, loss: f64, policy: &SwitchPolicy) -> Decision {
        if self.exhausted {
            return Decision::Exhausted;
        }
        if self.best.is_none_or(|b| loss < b) {
            self.best = Some(loss);
            self.bad_evals = 0;
            return Decision::Stay;
        }
        self.bad_evals += 1;
        if self.bad_evals < policy.stages[self.stage].patience {
            return Decision::Stay;
        }
        if self.stage + 1 < policy.stages.len() {
            self.stage += 1;
            self.best = None;
            self.bad_evals = 0;
            Decision::Advance(self.stage)
        } else {
            self.exhausted = true;
            Decision::Exhausted
        }
    }
}

impl Default for PlateauTracker {
    fn default() -> Self {
        Self::new()
    }
}

/// Decision after the last evaluation in `history`, replayed from scratch.
pub fn plateau_decision(history: &[f64], policy: &SwitchPolicy) -> Decision {
    let mut tracker = PlateauTracker::new();
    let mut last = Decision::Stay;
    for &loss in history {
        last = tracker.observe(loss, policy);
    }
    last
}
