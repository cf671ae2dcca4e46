use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `λ(t) = λ_full · min(1, exp((t − t_full) / tau))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct L2Schedule {
    pub lambda_full: f64,
    pub t_full: u64,
    pub tau: f64,
}

impl Default for L2Schedule {
    fn default() -> Self {
        L2Schedule {
            lambda_full: 9e-5,
            t_full: 100_000,
            tau: 10_000.0,
        }
    }
}

impl L2Schedule {
    pub fn coefficient(&self, step: u64) -> f64 {
        if step >= self.t_full {
            return self.lambda_full;
        }
        let behind = (self.t_full - step) as f64;
        self.lambda_full * (-behind / self.tau).exp()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_full >= 0.0 && self.lambda_full.is_finite()) {
            return Err(Error::Config(format!(
                "lambda_full must be finite and >= 0, got {}",
                self.lambda_full
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}
