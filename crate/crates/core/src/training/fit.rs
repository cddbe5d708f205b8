use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::checkpoint::{
    Checkpoint, EpochAccumulator, EpochRecord, Progress, SampleStream, CHECKPOINT_FORMAT,
    CHECKPOINT_FORMAT_VERSION,
};
use super::config::{Mode, TrainConfig};
use super::config::Reduction;
use super::loss::{
    classification_loss, cross_entropy_grad, distillation_grad, squared_distance, LossBreakdown,
};
use super::optim::Sgd;
use super::plateau::{decayed_lr, PlateauTracker};
use super::validate::validate_at;
use crate::error::{invalid, Error, Result};
use crate::imaging::{degrade_probability, prepare_train_view_with_probability, ImageRecord, TrainView};
use crate::model::{ModelHandle, OutputGrad};

pub const BEST_CHECKPOINT: &str = "best.ckpt.json";
pub const FINAL_CHECKPOINT: &str = "final.ckpt.json";
pub const LAST_CHECKPOINT: &str = "last.ckpt.json";
pub const TRAIN_LOG: &str = "train_log.csv";

/// Salt separating the epoch-permutation stream from the per-sample streams.
const PERMUTATION_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

fn permutation_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ PERMUTATION_SALT);
    rng.set_stream(epoch);
    rng
}

/// Independent stream for the view of the sample at `position` in `epoch`.
pub fn sample_rng(seed: u64, epoch: u64, position: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((epoch << 32) | position as u64);
    rng
}

/// Training order of one epoch: a seed-fixed shuffle of `0..len`.
pub fn epoch_order(seed: u64, epoch: u64, len: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut permutation_rng(seed, epoch));
    order
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub cfg: TrainConfig,
    pub student: ModelHandle,
    /// Always frozen when present.
    pub teacher: Option<ModelHandle>,
    pub optimizer: Sgd,
    pub progress: Progress,
}

impl TrainState {
    pub fn new(cfg: TrainConfig, student: ModelHandle, teacher: Option<ModelHandle>) -> Result<Self> {
        cfg.validate()?;
        if student.is_frozen() {
            return Err(invalid("the student must be trainable"));
        }
        match &teacher {
            Some(t) if !t.is_frozen() => return Err(invalid("the teacher must be frozen")),
            Some(t) if t.spec().embedding_dim != student.spec().embedding_dim => {
                return Err(invalid("teacher and student embedding dims differ"))
            }
            None if cfg.mode.uses_teacher() => {
                return Err(invalid("T-C mode needs a frozen teacher"))
            }
            _ => {}
        }
        let optimizer = Sgd::from_config(&cfg, student.param_count());
        let progress = Progress {
            step: 0,
            stream: SampleStream {
                seed: cfg.seed,
                epoch: 0,
                cursor: 0,
            },
            lr_current: cfg.lr_init,
            lr_decays: 0,
            plateau: PlateauTracker::new(),
            epoch_accum: EpochAccumulator::default(),
            val_history: Vec::new(),
            best_lowres: None,
        };
        Ok(Self {
            cfg,
            student,
            teacher,
            optimizer,
            progress,
        })
    }

    /// Restores a state from a checkpoint. `teacher` must be the same frozen
    /// model the run started with (checked by parameter hash).
    pub fn from_checkpoint(ckpt: Checkpoint, teacher: Option<ModelHandle>) -> Result<Self> {
        let teacher_hash = teacher.as_ref().map(|t| t.param_hash());
        if teacher_hash != ckpt.teacher_hash {
            return Err(invalid("teacher does not match the checkpoint"));
        }
        let student = ckpt.student()?;
        let mut state = Self::new(ckpt.config, student, teacher)?;
        if ckpt.optimizer.buffer.len() != state.student.param_count() {
            return Err(invalid("optimizer buffer does not match the model"));
        }
        state.optimizer = ckpt.optimizer;
        state.progress = ckpt.progress;
        Ok(state)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: self.cfg.clone(),
            model_spec: self.student.spec().clone(),
            student_params: self.student.params().to_vec(),
            student_hash: self.student.param_hash(),
            teacher_hash: self.teacher.as_ref().map(|t| t.param_hash()),
            optimizer: self.optimizer.clone(),
            progress: self.progress.clone(),
        }
    }

    pub fn step(&self) -> u64 {
        self.progress.step
    }

    pub fn lr_current(&self) -> f64 {
        self.progress.lr_current
    }

    pub fn val_history(&self) -> &[EpochRecord] {
        &self.progress.val_history
    }

    /// Probability of degrading a training image at the current step.
    pub fn current_degrade_probability(&self) -> f64 {
        match self.cfg.mode {
            Mode::TeacherCurriculum => degrade_probability(self.progress.step, self.cfg.total_steps)
                .expect("total_steps validated"),
            Mode::NoTeacherNoCurriculum => self.cfg.fixed_degrade_frequency,
        }
    }

    /// One optimizer update of the student on a batch of views.
    pub fn train_step(&mut self, views: &[TrainView], labels: &[u32]) -> Result<LossBreakdown> {
        let n = views.len();
        if n == 0 {
            return Err(invalid("empty batch"));
        }
        if labels.len() != n {
            return Err(invalid("labels do not match the batch"));
        }
        let k = self.student.spec().num_classes;
        if let Some(&bad) = labels.iter().find(|&&y| y as usize >= k) {
            return Err(invalid(format!("label {bad} out of range for {k} classes")));
        }
        let cfg = &self.cfg;
        let teacher_feats = match (&self.teacher, cfg.mode.uses_teacher()) {
            (Some(teacher), true) => {
                let inputs: Vec<_> = views.iter().map(|v| v.teacher_input.clone()).collect();
                Some(teacher.extract_features(&inputs)?)
            }
            _ => None,
        };
        let lambda = if teacher_feats.is_some() { cfg.lambda_distill } else { 0.0 };
        let reduction = cfg.distill_reduction;
        let student = &self.student;
        let dim = student.spec().embedding_dim;

        let per_sample = (0..n)
            .into_par_iter()
            .map(|i| {
                let label = labels[i] as usize;
                student.gradient(&views[i].student_input, |f| OutputGrad {
                    logits: cross_entropy_grad(&f.logits, label, n),
                    embedding: match &teacher_feats {
                        Some(t) => distillation_grad(&t[i].vector, &f.embedding, lambda, reduction, n),
                        None => vec![0.0; dim],
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let logits: Vec<Vec<f64>> = per_sample.iter().map(|(f, _)| f.logits.clone()).collect();
        let classification = classification_loss(&logits, labels)?;
        let distillation = match &teacher_feats {
            Some(t) => {
                let sum: f64 = per_sample
                    .iter()
                    .zip(t)
                    .map(|((f, _), te)| squared_distance(&te.vector, &f.embedding))
                    .sum();
                match reduction {
                    Reduction::Mean => sum / n as f64,
                    Reduction::Sum => sum,
                }
            }
            None => 0.0,
        };
        let loss = LossBreakdown::combine(classification, distillation, lambda);
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged {
                step: self.progress.step,
                loss: loss.total,
            });
        }

        let mut grad = vec![0.0; student.param_count()];
        for (_, g) in &per_sample {
            for (acc, v) in grad.iter_mut().zip(g) {
                *acc += v;
            }
        }
        let lr = self.progress.lr_current;
        self.optimizer.step(&mut self.student, &grad, lr)?;
        self.progress.step += 1;
        Ok(loss)
    }

    /// Epoch-end bookkeeping: validation, history, plateau decay.
    /// Returns true when the low-resolution metric improved.
    fn end_epoch(&mut self, val: &[ImageRecord]) -> Result<bool> {
        let acc = self.progress.epoch_accum;
        let steps = acc.steps.max(1) as f64;
        let (full, low) = validate_at(&self.student, val, self.cfg.validation_resolution)?;
        let record = EpochRecord {
            epoch: self.progress.stream.epoch,
            step: self.progress.step,
            lr: self.progress.lr_current,
            train_loss: acc.total / steps,
            classification: acc.classification / steps,
            distillation: acc.distillation / steps,
            fullres_metric: full,
            lowres24_metric: low,
        };
        log::info!(
            "epoch {} step {} lr {:.3e} loss {:.4} (cls {:.4}, distill {:.4}) val full {:.3} low {:.3}",
            record.epoch,
            record.step,
            record.lr,
            record.train_loss,
            record.classification,
            record.distillation,
            full,
            low
        );
        self.progress.val_history.push(record);
        if self.progress.plateau.observe(
            record.train_loss,
            self.cfg.plateau_patience,
            self.cfg.plateau_min_rel_improvement,
        ) {
            self.progress.lr_decays += 1;
            self.progress.lr_current =
                decayed_lr(self.cfg.lr_init, self.cfg.lr_decay_factor, self.progress.lr_decays);
        }
        let improved = self.progress.best_lowres.map_or(true, |b| low > b);
        if improved {
            self.progress.best_lowres = Some(low);
        }
        self.progress.stream.epoch += 1;
        self.progress.stream.cursor = 0;
        self.progress.epoch_accum = EpochAccumulator::default();
        Ok(improved)
    }
}

#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    /// Directory receiving checkpoints and the training log.
    pub output_dir: Option<PathBuf>,
    /// Stop (with a `last` checkpoint) once this many total steps are done.
    pub stop_after_step: Option<u64>,
}

fn check_dataset(records: &[ImageRecord], num_classes: usize, what: &str) -> Result<()> {
    if records.is_empty() {
        return Err(invalid(format!("{what} set is empty")));
    }
    if let Some(r) = records.iter().find(|r| r.identity as usize >= num_classes) {
        return Err(invalid(format!(
            "{what} label {} out of range for {num_classes} classes",
            r.identity
        )));
    }
    Ok(())
}

pub fn write_train_log(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in history {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Distills a student from `teacher`: the student starts as an exact copy of
/// the (frozen) teacher and is trained under `cfg.mode`.
pub fn fit(
    cfg: &TrainConfig,
    train_set: &[ImageRecord],
    val_set: &[ImageRecord],
    teacher: &ModelHandle,
    opts: &FitOptions,
) -> Result<TrainState> {
    if !teacher.is_frozen() {
        return Err(invalid("fit expects a frozen teacher"));
    }
    let state = TrainState::new(cfg.clone(), teacher.trainable_clone(), Some(teacher.clone()))?;
    run(state, train_set, val_set, opts)
}

/// Runs (or resumes) the training loop until `total_steps` or the requested
/// stop step.
pub fn run(
    mut state: TrainState,
    train_set: &[ImageRecord],
    val_set: &[ImageRecord],
    opts: &FitOptions,
) -> Result<TrainState> {
    let k = state.student.spec().num_classes;
    check_dataset(train_set, k, "training")?;
    check_dataset(val_set, k, "validation")?;
    let rset = state.cfg.resolution_set();
    let seed = state.cfg.seed;
    let total = state.cfg.total_steps;
    let out = opts.output_dir.as_deref();

    let write = |state: &TrainState, name: &str| -> Result<()> {
        if let Some(dir) = out {
            state.to_checkpoint().save(&dir.join(name))?;
            write_train_log(&dir.join(TRAIN_LOG), state.val_history())?;
        }
        Ok(())
    };

    let mut order = epoch_order(seed, state.progress.stream.epoch, train_set.len());
    while state.progress.step < total {
        if opts.stop_after_step.is_some_and(|s| state.progress.step >= s) {
            write(&state, LAST_CHECKPOINT)?;
            return Ok(state);
        }
        let SampleStream { epoch, cursor, .. } = state.progress.stream;
        let end = (cursor + state.cfg.batch_size).min(train_set.len());
        let p = state.current_degrade_probability();
        let views = (cursor..end)
            .into_par_iter()
            .map(|pos| {
                let rec = &train_set[order[pos]];
                prepare_train_view_with_probability(rec, p, &mut sample_rng(seed, epoch, pos), &rset)
            })
            .collect::<Result<Vec<_>>>()?;
        let labels: Vec<u32> = order[cursor..end].iter().map(|&i| train_set[i].identity).collect();
        let loss = state.train_step(&views, &labels)?;

        let acc = &mut state.progress.epoch_accum;
        acc.steps += 1;
        acc.total += loss.total;
        acc.classification += loss.classification;
        acc.distillation += loss.distillation;
        state.progress.stream.cursor = end;

        if end == train_set.len() {
            if state.end_epoch(val_set)? {
                write(&state, BEST_CHECKPOINT)?;
            }
            order = epoch_order(seed, state.progress.stream.epoch, train_set.len());
        }
    }
    if state.progress.epoch_accum.steps > 0 && state.end_epoch(val_set)? {
        write(&state, BEST_CHECKPOINT)?;
    }
    write(&state, FINAL_CHECKPOINT)?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_order_is_a_seeded_permutation() {
        let a = epoch_order(3, 0, 50);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_eq!(a, epoch_order(3, 0, 50));
        assert_ne!(a, epoch_order(3, 1, 50));
        assert_ne!(a, epoch_order(4, 0, 50));
    }
}
