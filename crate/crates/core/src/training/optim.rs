use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::error::{invalid, Result};
use crate::model::ModelHandle;

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient:
///
/// ```text
/// d   = grad + weight_decay * p
/// buf = momentum * buf + d
/// p  -= lr * buf
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    pub buffer: Vec<f64>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64, param_count: usize) -> Self {
        Self {
            momentum,
            weight_decay,
            buffer: vec![0.0; param_count],
        }
    }

    pub fn from_config(cfg: &TrainConfig, param_count: usize) -> Self {
        Self::new(cfg.momentum, cfg.weight_decay, param_count)
    }

    pub fn step(&mut self, model: &mut ModelHandle, grad: &[f64], lr: f64) -> Result<()> {
        if grad.len() != self.buffer.len() || grad.len() != model.param_count() {
            return Err(invalid("gradient length does not match the parameter count"));
        }
        let (momentum, wd) = (self.momentum, self.weight_decay);
        let buffer = &mut self.buffer;
        model.update_params(|params| {
            for ((p, b), g) in params.iter_mut().zip(buffer.iter_mut()).zip(grad) {
                let d = g + wd * *p;
                *b = momentum * *b + d;
                *p -= lr * *b;
            }
        })
    }
}
