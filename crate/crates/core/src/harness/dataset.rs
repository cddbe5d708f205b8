//! Dataset manifests and directory ingestion.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, IoContext, Result};
use crate::imaging::{Image, ImageRecord};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Probe,
    Gallery,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Probe => "probe",
            Split::Gallery => "gallery",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    /// Path relative to the dataset root, `/`-separated.
    pub path: String,
    pub identity: u32,
    pub media_id: u32,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    pub num_identities: u32,
    pub identity_names: Vec<String>,
    /// SHA-256 over every record and the bytes of its file.
    pub checksum: String,
}

impl DatasetManifest {
    /// Builds a manifest, hashing file contents under `root`.
    pub fn build(root: &Path, identity_names: Vec<String>, records: Vec<ManifestRecord>) -> Result<Self> {
        let num_identities = identity_names.len() as u32;
        if let Some(r) = records.iter().find(|r| r.identity >= num_identities) {
            return Err(invalid(format!("record {} has unknown identity {}", r.path, r.identity)));
        }
        let mut hasher = Sha256::new();
        for name in &identity_names {
            hasher.update(name.as_bytes());
            hasher.update(b"\n");
        }
        for r in &records {
            let path = root.join(&r.path);
            let bytes = fs::read(&path).at(&path)?;
            let file_hash = Sha256::digest(&bytes);
            hasher.update(
                format!("{}\t{}\t{}\t{}\t", r.path, r.identity, r.media_id, r.split.as_str()).as_bytes(),
            );
            hasher.update(file_hash);
            hasher.update(b"\n");
        }
        let manifest = Self {
            records,
            num_identities,
            identity_names,
            checksum: hex::encode(hasher.finalize()),
        };
        manifest.check_invariants()?;
        Ok(manifest)
    }

    /// Every validation identity must also be a training identity.
    pub fn check_invariants(&self) -> Result<()> {
        let ids = |s: Split| -> std::collections::BTreeSet<u32> {
            self.records.iter().filter(|r| r.split == s).map(|r| r.identity).collect()
        };
        let train = ids(Split::Train);
        if let Some(id) = ids(Split::Val).iter().find(|id| !train.contains(id)) {
            return Err(Error::ProtocolViolation(format!(
                "identity {id} appears in val but not in train"
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(r) = self.records.iter().find(|r| !seen.insert(&r.path)) {
            return Err(Error::ProtocolViolation(format!("{} listed twice", r.path)));
        }
        Ok(())
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        let path = root.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_vec_pretty(self)?).at(&path)
    }

    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let bytes = fs::read(&path).at(&path)?;
        let manifest: Self = serde_json::from_slice(&bytes)?;
        manifest.check_invariants()?;
        Ok(manifest)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Decodes every image of one split.
    pub fn load_split(&self, root: &Path, split: Split) -> Result<Vec<ImageRecord>> {
        self.split(split)
            .map(|r| {
                let image = read_image(&root.join(&r.path))?;
                Ok(ImageRecord::new(image, r.identity, r.media_id))
            })
            .collect()
    }
}

pub fn read_image(path: &Path) -> Result<Image> {
    let decoded = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Image::from_dynamic(&decoded)
}

pub fn write_png(image: &Image, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).at(parent)?;
    }
    image
        .to_dynamic()
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Per-identity split fractions applied to media groups during ingestion.
/// Media groups are shuffled with `seed`; `train_fraction` and `val_fraction`
/// of them go to train and val, and the remainder is divided between gallery
/// (`gallery_fraction` of it) and probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitRules {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub gallery_fraction: f64,
    pub seed: u64,
}

impl Default for SplitRules {
    fn default() -> Self {
        Self {
            train_fraction: 0.0,
            val_fraction: 0.0,
            gallery_fraction: 0.5,
            seed: 0,
        }
    }
}

impl SplitRules {
    fn validate(&self) -> Result<()> {
        let fractions = [self.train_fraction, self.val_fraction, self.gallery_fraction];
        if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(invalid("split fractions must lie in [0, 1]"));
        }
        if self.train_fraction + self.val_fraction > 1.0 + 1e-12 {
            return Err(invalid("train_fraction + val_fraction exceeds 1"));
        }
        Ok(())
    }

    /// Split counts `(train, val, gallery, probe)` for `n` media groups.
    pub fn counts(&self, n: usize) -> (usize, usize, usize, usize) {
        let take = |f: f64, of: usize| ((f * of as f64).round_ties_even() as usize).min(of);
        let train = take(self.train_fraction, n);
        let val = take(self.val_fraction, n).min(n - train);
        let rest = n - train - val;
        let gallery = take(self.gallery_fraction, rest);
        (train, val, gallery, rest - gallery)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub manifest: DatasetManifest,
    pub skipped: Vec<(PathBuf, String)>,
}

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

/// Groups files into media by stripping a trailing `_<digits>` or
/// `-<digits>` from the file stem: `clip3_001.png` and `clip3_002.png` share
/// the media key `clip3`.
pub fn media_key(stem: &str) -> &str {
    match stem.rfind(['_', '-']) {
        Some(i) if i > 0 && i + 1 < stem.len() && stem[i + 1..].bytes().all(|b| b.is_ascii_digit()) => {
            &stem[..i]
        }
        _ => stem,
    }
}

/// Scans `root/<identity_name>/<image files>` into a manifest. Identity labels
/// follow sorted directory names; unreadable images are skipped and reported.
pub fn ingest(root: &Path, rules: &SplitRules) -> Result<IngestReport> {
    rules.validate()?;
    let mut identity_dirs: Vec<(String, PathBuf)> = Vec::new();
    for entry in fs::read_dir(root).at(root)? {
        let entry = entry.at(root)?;
        if entry.file_type().at(entry.path())?.is_dir() {
            identity_dirs.push((entry.file_name().to_string_lossy().into_owned(), entry.path()));
        }
    }
    identity_dirs.sort();

    let mut skipped = Vec::new();
    let mut names = Vec::new();
    let mut records = Vec::new();
    let mut next_media = 0u32;
    for (name, dir) in identity_dirs {
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .at(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.is_file()
                    && p.extension()
                        .and_then(|e| e.to_str())
                        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            })
            .collect();
        files.sort();
        let mut readable = Vec::new();
        for f in files {
            match read_image(&f) {
                Ok(_) => readable.push(f),
                Err(e) => {
                    log::warn!("skipping {}: {e}", f.display());
                    skipped.push((f, e.to_string()));
                }
            }
        }
        if readable.is_empty() {
            continue;
        }
        let identity = names.len() as u32;
        names.push(name.clone());

        let mut groups: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
        for f in readable {
            let stem = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            groups.entry(media_key(&stem).to_string()).or_default().push(f);
        }
        let mut media: Vec<(u32, Vec<PathBuf>)> = groups
            .into_values()
            .map(|files| {
                let id = next_media;
                next_media += 1;
                (id, files)
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(rules.seed);
        rng.set_stream(u64::from(identity));
        media.shuffle(&mut rng);

        let (n_train, n_val, n_gallery, _) = rules.counts(media.len());
        for (i, (media_id, files)) in media.into_iter().enumerate() {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else if i < n_train + n_val + n_gallery {
                Split::Gallery
            } else {
                Split::Probe
            };
            for f in files {
                let rel = f.strip_prefix(root).expect("listed under root");
                let path = rel
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy())
                    .collect::<Vec<_>>()
                    .join("/");
                records.push(ManifestRecord {
                    path,
                    identity,
                    media_id,
                    split,
                });
            }
        }
    }
    if records.is_empty() {
        return Err(invalid(format!("no readable images under {}", root.display())));
    }
    records.sort_by(|a, b| a.path.cmp(&b.path));
    if !skipped.is_empty() {
        log::warn!("ingest skipped {} unreadable file(s)", skipped.len());
    }
    let manifest = DatasetManifest::build(root, names, records)?;
    Ok(IngestReport { manifest, skipped })
}
