//! Linear warmup to a peak rate, then halving on validation plateaus.

use serde::{Deserialize, Serialize};

use crate::training::config::TrainConfig;

/// Number of plateau events in a validation-loss history. A plateau is
/// `patience` consecutive epochs without a new best; the counter restarts
/// after each event.
pub fn plateau_events(history: &[f64], patience: usize) -> usize {
    let mut tracker = PlateauTracker::default();
    history.iter().filter(|&&v| tracker.observe(v, patience)).count()
}

/// `peak_lr * min(step / X, 1) * factor^events`.
pub fn lr_at(step: usize, val_history: &[f64], cfg: &TrainConfig) -> f64 {
    lr_with_halvings(step, plateau_events(val_history, cfg.plateau_patience), cfg)
}

pub fn lr_with_halvings(step: usize, halvings: usize, cfg: &TrainConfig) -> f64 {
    let ramp = if step >= cfg.warmup_steps {
        1.0
    } else {
        step as f64 / cfg.warmup_steps as f64
    };
    cfg.peak_lr * ramp * cfg.halving_factor.powi(halvings as i32)
}

/// Incremental form of [`plateau_events`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlateauTracker {
    pub best: Option<f64>,
    pub stale_epochs: usize,
}

impl PlateauTracker {
    /// Records one epoch; returns true when it completes a plateau.
    pub fn observe(&mut self, val_loss: f64, patience: usize) -> bool {
        match self.best {
            Some(b) if val_loss >= b => {
                self.stale_epochs += 1;
                if self.stale_epochs >= patience {
                    self.stale_epochs = 0;
                    return true;
                }
                false
            }
            _ => {
                self.best = Some(val_loss);
                self.stale_epochs = 0;
                false
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_and_halving() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, &[], &cfg), 0.0);
        assert_eq!(lr_at(250, &[], &cfg), 2e-4);
        assert_eq!(lr_at(500, &[], &cfg), 4e-4);
        assert_eq!(lr_at(10_000, &[], &cfg), 4e-4);
        // best at epoch 1, no improvement in epochs 2 and 3
        assert_eq!(lr_at(1000, &[1.0, 0.5, 0.6, 0.5], &cfg), 2e-4);
        assert_eq!(lr_at(1000, &[1.0, 0.5, 0.6], &cfg), 4e-4);
    }

    #[test]
    fn plateau_counting() {
        assert_eq!(plateau_events(&[3.0, 2.0, 1.0], 2), 0);
        assert_eq!(plateau_events(&[1.0, 1.0, 1.0], 2), 1);
        assert_eq!(plateau_events(&[1.0, 1.0, 1.0, 1.0, 1.0], 2), 2);
        assert_eq!(plateau_events(&[1.0, 2.0, 0.5, 0.7, 0.8], 2), 1);
        assert_eq!(plateau_events(&[1.0, 2.0], 1), 1);
    }
}
