//! Dataset preparation, experiment orchestration, and report emission.

mod dataset;
mod experiment;
mod report;
mod synthetic;

pub use dataset::{
    ingest, media_key, read_image, write_png, DatasetManifest, IngestReport, ManifestRecord, Split,
    SplitRules, MANIFEST_FILE,
};
pub use experiment::*;
pub use report::*;
pub use synthetic::{
    generate_synthetic, identity_name, render_synthetic, sample_path, self_check, Jitter, SelfCheck,
    SyntheticDatasetConfig, SyntheticOutput, SyntheticSample,
};
