use serde::{Deserialize, Serialize};

use super::config::Reduction;
use crate::error::{invalid, Result};
use crate::model::{softmax, Embedding};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// Mean softmax cross-entropy.
    pub classification: f64,
    /// Reduced squared feature distance, before weighting.
    pub distillation: f64,
    pub lambda_applied: f64,
}

impl LossBreakdown {
    pub(crate) fn combine(classification: f64, distillation: f64, lambda: f64) -> Self {
        Self {
            total: classification + lambda * distillation,
            classification,
            distillation,
            lambda_applied: lambda,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.classification.is_finite() && self.distillation.is_finite()
    }
}

/// `-log softmax(logits)[label]`, computed through log-sum-exp.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn reduction_scale(reduction: Reduction, n: usize) -> f64 {
    match reduction {
        Reduction::Mean => 1.0 / n as f64,
        Reduction::Sum => 1.0,
    }
}

fn check_labels(logits: &[Vec<f64>], labels: &[u32]) -> Result<()> {
    if logits.is_empty() {
        return Err(invalid("empty batch"));
    }
    if logits.len() != labels.len() {
        return Err(invalid(format!(
            "{} logit rows but {} labels",
            logits.len(),
            labels.len()
        )));
    }
    for (row, &y) in logits.iter().zip(labels) {
        if (y as usize) >= row.len() {
            return Err(invalid(format!("label {y} out of range for {} classes", row.len())));
        }
    }
    Ok(())
}

/// Combined loss: mean cross-entropy plus `lambda` times the reduced squared
/// distance between teacher and student features.
pub fn distillation_loss(
    logits: &[Vec<f64>],
    labels: &[u32],
    teacher_feats: &[Embedding],
    student_feats: &[Embedding],
    lambda: f64,
) -> Result<LossBreakdown> {
    distillation_loss_with(logits, labels, teacher_feats, student_feats, lambda, Reduction::Mean)
}

pub fn distillation_loss_with(
    logits: &[Vec<f64>],
    labels: &[u32],
    teacher_feats: &[Embedding],
    student_feats: &[Embedding],
    lambda: f64,
    reduction: Reduction,
) -> Result<LossBreakdown> {
    check_labels(logits, labels)?;
    let n = logits.len();
    if teacher_feats.len() != n || student_feats.len() != n {
        return Err(invalid("feature batches must match the logit batch size"));
    }
    for (t, s) in teacher_feats.iter().zip(student_feats) {
        if t.dim() != s.dim() {
            return Err(invalid(format!(
                "embedding dims differ: teacher {} vs student {}",
                t.dim(),
                s.dim()
            )));
        }
    }
    let classification = classification_loss(logits, labels)?;
    let distillation = teacher_feats
        .iter()
        .zip(student_feats)
        .map(|(t, s)| squared_distance(&t.vector, &s.vector))
        .sum::<f64>()
        * reduction_scale(reduction, n);
    Ok(LossBreakdown::combine(classification, distillation, lambda))
}

pub fn classification_loss(logits: &[Vec<f64>], labels: &[u32]) -> Result<f64> {
    check_labels(logits, labels)?;
    Ok(logits
        .iter()
        .zip(labels)
        .map(|(row, &y)| cross_entropy(row, y as usize))
        .sum::<f64>()
        / logits.len() as f64)
}

/// Gradient of the batch cross-entropy term w.r.t. one sample's logits.
pub(crate) fn cross_entropy_grad(logits: &[f64], label: usize, batch: usize) -> Vec<f64> {
    let mut g = softmax(logits);
    g[label] -= 1.0;
    for v in &mut g {
        *v /= batch as f64;
    }
    g
}

/// Gradient of `lambda * reduce ||t - s||^2` w.r.t. one student feature vector.
pub fn distillation_grad(
    teacher: &[f64],
    student: &[f64],
    lambda: f64,
    reduction: Reduction,
    batch: usize,
) -> Vec<f64> {
    let scale = 2.0 * lambda * reduction_scale(reduction, batch);
    student
        .iter()
        .zip(teacher)
        .map(|(s, t)| scale * (s - t))
        .collect()
}
