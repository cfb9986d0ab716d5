use serde::{Deserialize, Serialize};

use crate::error::{Result, UsesError};

/// What the network is trained to produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// One output, multi-resolution L1 loss against the mode's target.
    #[default]
    Enhance,
    /// `num_outputs` sources, PIT SI-SNR loss.
    Separate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub task: Task,
    pub peak_lr: f64,
    /// Linear warmup length X.
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub chunk_seconds: f64,
    pub max_epochs: usize,
    /// Stop after this many optimizer steps, if set.
    pub max_steps: Option<usize>,
    /// Training chunks drawn per epoch.
    pub samples_per_epoch: usize,
    /// Epochs without validation improvement that trigger a halving.
    pub plateau_patience: usize,
    pub halving_factor: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm limit; 0 disables clipping.
    pub grad_clip: f64,
    /// Upper bound on channels kept by channel shuffling.
    pub max_channels: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: Task::Enhance,
            peak_lr: 4e-4,
            warmup_steps: 500,
            batch_size: 4,
            chunk_seconds: 4.0,
            max_epochs: 20,
            max_steps: None,
            samples_per_epoch: 8000,
            plateau_patience: 2,
            halving_factor: 0.5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 5.0,
            max_channels: 4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(UsesError::Config(msg));
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return fail(format!("peak_lr must be > 0, got {}", self.peak_lr));
        }
        if self.warmup_steps == 0 {
            return fail("warmup_steps must be >= 1".into());
        }
        if self.batch_size == 0 || self.samples_per_epoch == 0 || self.max_epochs == 0 {
            return fail("batch_size, samples_per_epoch and max_epochs must be >= 1".into());
        }
        if !(self.chunk_seconds > 0.0) {
            return fail(format!("chunk_seconds must be > 0, got {}", self.chunk_seconds));
        }
        if self.plateau_patience == 0 {
            return fail("plateau_patience must be >= 1".into());
        }
        if !(self.halving_factor > 0.0 && self.halving_factor <= 1.0) {
            return fail(format!("halving_factor must be in (0, 1], got {}", self.halving_factor));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return fail(format!("adam_eps must be > 0, got {}", self.adam_eps));
        }
        if !(self.grad_clip >= 0.0) {
            return fail(format!("grad_clip must be >= 0, got {}", self.grad_clip));
        }
        if self.max_channels == 0 {
            return fail("max_channels must be >= 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_guards_fire() {
        TrainConfig::default().validate().unwrap();
        let bad = [
            TrainConfig { peak_lr: 0.0, ..TrainConfig::default() },
            TrainConfig { warmup_steps: 0, ..TrainConfig::default() },
            TrainConfig { plateau_patience: 0, ..TrainConfig::default() },
            TrainConfig { adam_beta2: 1.0, ..TrainConfig::default() },
            TrainConfig { grad_clip: -1.0, ..TrainConfig::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
        let parsed: TrainConfig = serde_json::from_str(r#"{"peak_lr": 1e-3}"#).unwrap();
        assert_eq!(parsed.batch_size, 4);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lr": 1e-3}"#).is_err());
    }
}
