use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Variant;

/// Optimiser and schedule settings. Defaults are sized for a CPU run of a few
/// seconds; [`TrainConfig::full_scale`] restores the full-scale schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub validation_steps: usize,
    /// Share of users held out for validation.
    pub validation_fraction: f64,
    pub seed: u64,
    pub variant: Variant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
            batch_size: 32,
            epochs: 10,
            steps_per_epoch: 50,
            validation_steps: 10,
            validation_fraction: 0.1,
            seed: 0,
            variant: Variant::Fused,
        }
    }
}

impl TrainConfig {
    pub fn full_scale() -> Self {
        Self {
            batch_size: 256,
            epochs: 30,
            steps_per_epoch: 1000,
            validation_steps: 100,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("steps_per_epoch", self.steps_per_epoch),
            ("validation_steps", self.validation_steps),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!(
                "validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            ));
        }
        Ok(())
    }
}
