use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::imaging::{prepare_eval_input, ImageRecord};
use crate::model::{argmax, ModelHandle};

const CHUNK: usize = 32;

/// Top-1 accuracy of `model` on `records`, each optionally degraded to
/// `target` before the center-crop preprocessing.
pub fn top1_accuracy(model: &ModelHandle, records: &[ImageRecord], target: Option<u32>) -> Result<f64> {
    if records.is_empty() {
        return Err(invalid("validation set is empty"));
    }
    let mut correct = 0usize;
    for chunk in records.chunks(CHUNK) {
        let inputs = chunk
            .par_iter()
            .map(|r| prepare_eval_input(r, target))
            .collect::<Result<Vec<_>>>()?;
        let logits = model.classify(&inputs)?;
        correct += logits
            .iter()
            .zip(chunk)
            .filter(|(row, r)| argmax(row) == r.identity as usize)
            .count();
    }
    Ok(correct as f64 / records.len() as f64)
}

/// Full-resolution and low-resolution (default 24 px) top-1 accuracy.
pub fn validate(student: &ModelHandle, val_set: &[ImageRecord]) -> Result<(f64, f64)> {
    validate_at(student, val_set, 24)
}

pub fn validate_at(student: &ModelHandle, val_set: &[ImageRecord], low_res: u32) -> Result<(f64, f64)> {
    let full = top1_accuracy(student, val_set, None)?;
    let low = top1_accuracy(student, val_set, Some(low_res))?;
    Ok((full, low))
}
