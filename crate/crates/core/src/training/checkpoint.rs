use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::optim::Sgd;
use super::plateau::PlateauTracker;
use crate::error::{Error, IoContext, Result};
use crate::model::{ModelHandle, ModelSpec};

pub const CHECKPOINT_FORMAT: &str = "resdistill-checkpoint";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Every random draw of a run derives from `(seed, epoch, cursor)`: the epoch
/// permutation from `(seed, epoch)` and each sample's view from
/// `(seed, epoch, position)`. Persisting the triple restores the stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleStream {
    pub seed: u64,
    pub epoch: u64,
    /// Next position within the epoch permutation.
    pub cursor: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpochAccumulator {
    pub steps: u64,
    pub total: f64,
    pub classification: f64,
    pub distillation: f64,
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub classification: f64,
    pub distillation: f64,
    pub fullres_metric: f64,
    pub lowres24_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub step: u64,
    pub stream: SampleStream,
    pub lr_current: f64,
    pub lr_decays: u32,
    pub plateau: PlateauTracker,
    pub epoch_accum: EpochAccumulator,
    pub val_history: Vec<EpochRecord>,
    pub best_lowres: Option<f64>,
}

/// Self-describing training snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub format_version: u32,
    pub config: TrainConfig,
    pub model_spec: ModelSpec,
    pub student_params: Vec<f64>,
    pub student_hash: String,
    pub teacher_hash: Option<String>,
    pub optimizer: Sgd,
    pub progress: Progress,
}

impl Checkpoint {
    pub fn student(&self) -> Result<ModelHandle> {
        ModelHandle::from_parts(self.model_spec.clone(), self.student_params.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).at(parent)?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, serde_json::to_vec(self)?).at(&tmp)?;
        fs::rename(&tmp, path).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).at(path)?;
        Self::from_slice(&bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format: String,
            format_version: u32,
        }
        let header: Header = serde_json::from_slice(bytes)?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!("not a checkpoint: format {:?}", header.format)));
        }
        if header.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::CheckpointVersion {
                found: header.format_version,
                expected: CHECKPOINT_FORMAT_VERSION,
            });
        }
        let ckpt: Checkpoint = serde_json::from_slice(bytes)?;
        let student = ckpt.student()?;
        if student.param_hash() != ckpt.student_hash {
            return Err(Error::Config("checkpoint parameter hash mismatch".into()));
        }
        Ok(ckpt)
    }
}
