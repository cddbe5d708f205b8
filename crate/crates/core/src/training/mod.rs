//! Teacher-student distillation loop: combined classification and feature
//! matching loss, SGD with momentum and weight decay, plateau learning-rate
//! decay, dual-resolution validation and checkpointing.

mod checkpoint;
mod config;
mod fit;
mod loss;
mod optim;
mod plateau;
mod validate;

pub use checkpoint::{
    Checkpoint, EpochAccumulator, EpochRecord, Progress, SampleStream, CHECKPOINT_FORMAT,
    CHECKPOINT_FORMAT_VERSION,
};
pub use config::{Mode, Reduction, TrainConfig};
pub use fit::{
    epoch_order, fit, run, sample_rng, write_train_log, FitOptions, TrainState, BEST_CHECKPOINT,
    FINAL_CHECKPOINT, LAST_CHECKPOINT, TRAIN_LOG,
};
pub use loss::{
    classification_loss, cross_entropy, distillation_grad, distillation_loss,
    distillation_loss_with, squared_distance, LossBreakdown,
};
pub use optim::Sgd;
pub use plateau::{decayed_lr, update_lr_on_plateau, PlateauTracker};
pub use validate::{top1_accuracy, validate, validate_at};
