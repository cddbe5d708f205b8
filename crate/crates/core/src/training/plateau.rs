use serde::{Deserialize, Serialize};

use super::config::TrainConfig;

/// Tracks epochs without sufficient relative improvement of the training loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauTracker {
    pub best: Option<f64>,
    pub bad_epochs: usize,
}

impl Default for PlateauTracker {
    fn default() -> Self {
        Self::new()
    }
}

impl PlateauTracker {
    pub fn new() -> Self {
        Self {
            best: None,
            bad_epochs: 0,
        }
    }

    /// Records one epoch loss. Returns true when the learning rate should be
    /// decayed; the patience counter is reset in that case.
    pub fn observe(&mut self, loss: f64, patience: usize, min_rel_improvement: f64) -> bool {
        match self.best {
            Some(best) if loss >= best - min_rel_improvement * best.abs() => {
                self.bad_epochs += 1;
            }
            _ => {
                self.best = Some(loss);
                self.bad_epochs = 0;
            }
        }
        if self.bad_epochs >= patience {
            self.bad_epochs = 0;
            true
        } else {
            false
        }
    }
}

/// Replays the epoch-loss history and returns the learning rate to use next:
/// `lr / lr_decay_factor` when the latest epoch completes a plateau, `lr`
/// otherwise.
pub fn update_lr_on_plateau(history: &[f64], lr: f64, cfg: &TrainConfig) -> f64 {
    let mut tracker = PlateauTracker::new();
    let mut decay = false;
    for &loss in history {
        decay = tracker.observe(loss, cfg.plateau_patience, cfg.plateau_min_rel_improvement);
    }
    if decay {
        lr / cfg.lr_decay_factor
    } else {
        lr
    }
}

/// `lr_init / factor^k`, evaluated directly so repeated decays stay exact.
pub fn decayed_lr(lr_init: f64, factor: f64, decays: u32) -> f64 {
    lr_init / factor.powi(decays as i32)
}
