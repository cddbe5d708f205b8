use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, IoContext, Result};
use crate::imaging::ResolutionSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Frozen teacher supervision plus the linear degradation curriculum.
    #[serde(rename = "T-C")]
    TeacherCurriculum,
    /// Softmax loss only, degradation at a fixed frequency.
    #[serde(rename = "nT-nC")]
    NoTeacherNoCurriculum,
}

impl Mode {
    pub fn label(&self) -> &'static str {
        match self {
            Mode::TeacherCurriculum => "T-C",
            Mode::NoTeacherNoCurriculum => "nT-nC",
        }
    }

    pub fn uses_teacher(&self) -> bool {
        matches!(self, Mode::TeacherCurriculum)
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "T-C" => Ok(Mode::TeacherCurriculum),
            "nT-nC" => Ok(Mode::NoTeacherNoCurriculum),
            other => Err(invalid(format!("unknown training mode {other:?}"))),
        }
    }
}

/// How the squared feature distances are reduced over the batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda_distill: f64,
    pub distill_reduction: Reduction,
    pub batch_size: usize,
    pub lr_init: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay_factor: f64,
    pub plateau_patience: usize,
    pub plateau_min_rel_improvement: f64,
    pub total_steps: u64,
    pub seed: u64,
    pub mode: Mode,
    pub fixed_degrade_frequency: f64,
    pub resolution_exponent_lo: u32,
    pub resolution_exponent_hi: u32,
    /// Shortest side used for the low-resolution validation copy.
    pub validation_resolution: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_distill: 0.1,
            distill_reduction: Reduction::Mean,
            batch_size: 64,
            lr_init: 1e-3,
            momentum: 0.9,
            weight_decay: 1e-5,
            lr_decay_factor: 5.0,
            plateau_patience: 3,
            plateau_min_rel_improvement: 1e-3,
            total_steps: 3000,
            seed: 0,
            mode: Mode::TeacherCurriculum,
            fixed_degrade_frequency: 0.5,
            resolution_exponent_lo: 3,
            resolution_exponent_hi: 8,
            validation_resolution: 24,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr_init", self.lr_init),
            ("lr_decay_factor", self.lr_decay_factor),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lambda_distill.is_finite() && self.lambda_distill >= 0.0) {
            return Err(invalid("lambda_distill must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid("momentum must lie in [0, 1)"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(invalid("weight_decay must be non-negative"));
        }
        if self.lr_decay_factor < 1.0 {
            return Err(invalid("lr_decay_factor must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be positive"));
        }
        if self.plateau_patience == 0 {
            return Err(invalid("plateau_patience must be positive"));
        }
        if self.total_steps == 0 {
            return Err(invalid("total_steps must be positive"));
        }
        if !(0.0..=1.0).contains(&self.fixed_degrade_frequency) {
            return Err(invalid("fixed_degrade_frequency must lie in [0, 1]"));
        }
        if self.validation_resolution == 0 {
            return Err(invalid("validation_resolution must be positive"));
        }
        self.resolution_set().validate()
    }

    pub fn resolution_set(&self) -> ResolutionSet {
        ResolutionSet {
            exponent_lo: self.resolution_exponent_lo,
            exponent_hi: self.resolution_exponent_hi,
        }
    }

    /// Parses a TOML document; unknown keys are rejected.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }
}
