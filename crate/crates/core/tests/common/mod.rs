//! Shared test helpers: brute-force metric oracles, a JSON schema checker
//! and small fixtures.
#![allow(dead_code)]

pub mod oracle;
pub mod schema;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resdistill_core::harness::{
    render_synthetic, DatasetSource, ExperimentConfig, Split, SyntheticDatasetConfig,
};
use resdistill_core::imaging::{Image, ImageRecord};
use resdistill_core::model::ModelSpec;
use resdistill_core::training::TrainConfig;

/// A few identities of small images; cheap enough for end-to-end runs.
pub fn tiny_synthetic(seed: u64) -> SyntheticDatasetConfig {
    SyntheticDatasetConfig {
        num_identities: 4,
        images_per_identity: 10,
        image_size: [40, 48],
        seed,
        ..SyntheticDatasetConfig::default()
    }
}

pub fn random_record(rng: &mut ChaCha8Rng, h: usize, w: usize, identity: u32) -> ImageRecord {
    let data = (0..h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
    ImageRecord::new(Image::new(h, w, 1, data).unwrap(), identity, 0)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Train and validation records of a rendered synthetic set.
pub fn train_val(cfg: &SyntheticDatasetConfig) -> (Vec<ImageRecord>, Vec<ImageRecord>) {
    let samples = render_synthetic(cfg).unwrap();
    let pick = |split: Split| -> Vec<ImageRecord> {
        samples.iter().filter(|s| s.split == split).map(|s| s.record.clone()).collect()
    };
    (pick(Split::Train), pick(Split::Val))
}

/// A backbone small enough for multi-epoch runs inside unit-test time.
pub fn small_spec(num_classes: usize) -> ModelSpec {
    ModelSpec {
        conv_widths: vec![4, 4],
        conv_strides: vec![2, 2],
        embedding_dim: 8,
        ..ModelSpec::toy(1, num_classes)
    }
}

/// Every stage of the experiment on the tiny dataset, a few steps each.
pub fn tiny_experiment(seed: u64) -> ExperimentConfig {
    let short = |cfg: TrainConfig| TrainConfig { total_steps: 6, batch_size: 8, ..cfg };
    let base = ExperimentConfig::default();
    ExperimentConfig {
        seed,
        dataset: DatasetSource::Synthetic(tiny_synthetic(seed)),
        teacher: short(base.teacher.clone()),
        student: short(base.student.clone()),
        ..base
    }
}

/// Relative paths and contents of every file under `root`, sorted.
pub fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}
