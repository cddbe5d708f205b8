//! Experiment orchestration: pretrain a teacher at full resolution, freeze
//! it, distill students, and evaluate every model under every protocol.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::{DatasetManifest, Split};
use super::report::*;
use super::synthetic::{render_synthetic, SyntheticDatasetConfig};
use crate::error::{invalid, Error, IoContext, Result};
use crate::imaging::ImageRecord;
use crate::model::{HeadInit, ModelHandle, ModelSpec};
use crate::protocols::{
    all_pairs, cmc_from_scores, cross_resolution_from_embeddings, det_auc, embed_templates,
    open_set_from_scores, pair_roc, parse_resolution, rankings_from_scores, resolution_label,
    retrieval_map, save_pairs, tar_at_far, tpir_at_fpir, verification_accuracy, EmbeddedSets,
    EvalResolution, ScoreMatrix, Template, TemplateSet, TemplateSource, VerificationPair,
    EVAL_RESOLUTIONS,
};
use crate::training::{run, Checkpoint, FitOptions, Mode, TrainConfig, TrainState, FINAL_CHECKPOINT};

pub const EXPERIMENT_CONFIG_FILE: &str = "experiment.toml";
pub const METADATA_FILE: &str = "metadata.json";
pub const FAILURE_MARKER: &str = "FAILED";
pub const PAIRS_FILE: &str = "pairs.csv";
pub const DATASET_SUMMARY_FILE: &str = "dataset.json";
pub const MODELS_DIR: &str = "models";
pub const REPORTS_DIR: &str = "reports";
pub const TEACHER_DIR: &str = "teacher";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ExperimentMode {
    /// Evaluate the frozen full-resolution teacher as is.
    #[serde(rename = "teacher-only")]
    TeacherOnly,
    #[serde(rename = "nT-nC")]
    NoTeacherNoCurriculum,
    #[serde(rename = "T-C")]
    TeacherCurriculum,
}

impl ExperimentMode {
    pub const ALL: [ExperimentMode; 3] = [
        ExperimentMode::TeacherOnly,
        ExperimentMode::NoTeacherNoCurriculum,
        ExperimentMode::TeacherCurriculum,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            ExperimentMode::TeacherOnly => "teacher-only",
            ExperimentMode::NoTeacherNoCurriculum => "nT-nC",
            ExperimentMode::TeacherCurriculum => "T-C",
        }
    }

    pub fn training_mode(&self) -> Option<Mode> {
        match self {
            ExperimentMode::TeacherOnly => None,
            ExperimentMode::NoTeacherNoCurriculum => Some(Mode::NoTeacherNoCurriculum),
            ExperimentMode::TeacherCurriculum => Some(Mode::TeacherCurriculum),
        }
    }
}

impl std::str::FromStr for ExperimentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentMode::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| invalid(format!("unknown mode {s:?} (expected teacher-only, nT-nC or T-C)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSource {
    /// Rendered in memory from a generator config.
    Synthetic(SyntheticDatasetConfig),
    /// A directory holding `manifest.json` and the images it lists.
    Directory { path: PathBuf },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic(SyntheticDatasetConfig::default())
    }
}

/// Full-resolution teacher pretraining: softmax loss only, no degradation.
pub fn default_teacher_config() -> TrainConfig {
    TrainConfig {
        mode: Mode::NoTeacherNoCurriculum,
        fixed_degrade_frequency: 0.0,
        lr_init: 1e-2,
        total_steps: 400,
        ..TrainConfig::default()
    }
}

pub fn default_student_config() -> TrainConfig {
    TrainConfig {
        total_steps: 600,
        plateau_patience: 50,
        ..TrainConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Seeds model initialization and every training run.
    pub seed: u64,
    pub modes: Vec<ExperimentMode>,
    pub far_target: f64,
    pub fpir_target: f64,
    /// Evaluation grid; pixel counts or `"full"`.
    pub resolutions: Vec<String>,
    pub dataset: DatasetSource,
    pub teacher: TrainConfig,
    /// Shared by all students; `mode` and `seed` are set per run.
    pub student: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            modes: ExperimentMode::ALL.to_vec(),
            far_target: 0.1,
            fpir_target: 0.1,
            resolutions: EVAL_RESOLUTIONS.iter().map(|&r| resolution_label(r)).collect(),
            dataset: DatasetSource::default(),
            teacher: default_teacher_config(),
            student: default_student_config(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(invalid("at least one mode is required"));
        }
        for (name, v) in [("far_target", self.far_target), ("fpir_target", self.fpir_target)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("{name} must lie in [0, 1]")));
            }
        }
        self.eval_resolutions()?;
        self.teacher_config().validate()?;
        if let DatasetSource::Synthetic(s) = &self.dataset {
            s.validate()?;
        }
        for m in &self.modes {
            if let Some(mode) = m.training_mode() {
                self.student_config(mode).validate()?;
            }
        }
        Ok(())
    }

    pub fn eval_resolutions(&self) -> Result<Vec<EvalResolution>> {
        if self.resolutions.is_empty() {
            return Err(invalid("resolutions must not be empty"));
        }
        let parsed = self
            .resolutions
            .iter()
            .map(|s| parse_resolution(s))
            .collect::<Result<Vec<_>>>()?;
        let mut seen = parsed.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != parsed.len() {
            return Err(invalid("resolutions must be distinct"));
        }
        Ok(parsed)
    }

    pub fn teacher_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.teacher.clone()
        }
    }

    pub fn student_config(&self, mode: Mode) -> TrainConfig {
        TrainConfig {
            seed: self.seed.wrapping_add(1),
            mode,
            ..self.student.clone()
        }
    }

    /// Parses a TOML document; unknown keys are rejected.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Dataset splits arranged for training and every protocol.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub num_identities: usize,
    pub channels: usize,
    pub checksum: String,
    pub train: Vec<ImageRecord>,
    pub val: Vec<ImageRecord>,
    /// One single-image template per probe image.
    pub probes: TemplateSet,
    /// One template per subject, built from all of its gallery images.
    pub gallery: TemplateSet,
    /// Every gallery image on its own, the item pool for retrieval.
    pub gallery_items: TemplateSet,
    pub pairs: Vec<VerificationPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub checksum: String,
    pub num_identities: usize,
    pub channels: usize,
    pub train_images: usize,
    pub val_images: usize,
    pub probe_templates: usize,
    pub gallery_templates: usize,
    pub genuine_pairs: usize,
    pub impostor_pairs: usize,
}

fn records_checksum(records: &[(ImageRecord, Split)]) -> String {
    let mut h = Sha256::new();
    for (r, split) in records {
        let img = &r.image;
        h.update(format!("{} {} {} {}x{}x{}\n", r.identity, r.media_id, split.as_str(), img.height(), img.width(), img.channels()));
        let bytes: Vec<u8> = img.data().iter().map(|v| (v * 255.0).round() as u8).collect();
        h.update(&bytes);
    }
    hex::encode(h.finalize())
}

impl ExperimentData {
    pub fn from_records(records: Vec<(ImageRecord, Split)>, num_identities: usize, checksum: String) -> Result<Self> {
        let channels = records
            .first()
            .map(|(r, _)| r.image.channels())
            .ok_or_else(|| invalid("dataset is empty"))?;
        if records.iter().any(|(r, _)| r.image.channels() != channels) {
            return Err(invalid("all images must have the same channel count"));
        }
        let pick = |s: Split| -> Vec<ImageRecord> {
            records.iter().filter(|(_, x)| *x == s).map(|(r, _)| r.clone()).collect()
        };
        let (train, val) = (pick(Split::Train), pick(Split::Val));
        let (probe_imgs, gallery_imgs) = (pick(Split::Probe), pick(Split::Gallery));
        if train.is_empty() || val.is_empty() || probe_imgs.is_empty() || gallery_imgs.is_empty() {
            return Err(invalid("dataset needs train, val, probe and gallery images"));
        }

        let mut by_subject: BTreeMap<u32, Vec<ImageRecord>> = BTreeMap::new();
        for r in &gallery_imgs {
            by_subject.entry(r.identity).or_default().push(r.clone());
        }
        let gallery = TemplateSet::new(
            by_subject
                .into_iter()
                .map(|(subject, images)| TemplateSource {
                    template_id: subject,
                    subject_id: subject,
                    images,
                })
                .collect(),
        )?;
        let base = num_identities as u32;
        let single = |imgs: &[ImageRecord], offset: u32| {
            TemplateSet::new(
                imgs.iter()
                    .enumerate()
                    .map(|(i, r)| TemplateSource {
                        template_id: offset + i as u32,
                        subject_id: r.identity,
                        images: vec![r.clone()],
                    })
                    .collect(),
            )
        };
        let probes = single(&probe_imgs, base)?;
        let gallery_items = single(&gallery_imgs, base + probe_imgs.len() as u32)?;
        let pairs = all_pairs(&probes, &gallery);
        Ok(Self {
            num_identities,
            channels,
            checksum,
            train,
            val,
            probes,
            gallery,
            gallery_items,
            pairs,
        })
    }

    pub fn load(source: &DatasetSource) -> Result<Self> {
        match source {
            DatasetSource::Synthetic(cfg) => {
                let samples = render_synthetic(cfg)?;
                let records: Vec<(ImageRecord, Split)> =
                    samples.into_iter().map(|s| (s.record, s.split)).collect();
                let checksum = records_checksum(&records);
                Self::from_records(records, cfg.num_identities, checksum)
            }
            DatasetSource::Directory { path } => {
                let manifest = DatasetManifest::load(path)?;
                let mut records = Vec::with_capacity(manifest.records.len());
                for split in [Split::Train, Split::Val, Split::Probe, Split::Gallery] {
                    for r in manifest.load_split(path, split)? {
                        records.push((r, split));
                    }
                }
                Self::from_records(records, manifest.num_identities as usize, manifest.checksum.clone())
            }
        }
    }

    pub fn summary(&self) -> DatasetSummary {
        let genuine = self
            .pairs
            .iter()
            .filter(|p| p.label == crate::protocols::PairLabel::Genuine)
            .count();
        DatasetSummary {
            checksum: self.checksum.clone(),
            num_identities: self.num_identities,
            channels: self.channels,
            train_images: self.train.len(),
            val_images: self.val.len(),
            probe_templates: self.probes.len(),
            gallery_templates: self.gallery.len(),
            genuine_pairs: genuine,
            impostor_pairs: self.pairs.len() - genuine,
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec::toy(self.channels, self.num_identities)
    }

    /// Subjects enrolled in the open-set gallery: every other subject.
    pub fn enrolled_subjects(&self) -> Vec<u32> {
        self.gallery
            .sources
            .iter()
            .map(|s| s.subject_id)
            .filter(|id| id % 2 == 0)
            .collect()
    }
}

fn model_dir(out: &Path, name: &str) -> PathBuf {
    out.join(MODELS_DIR).join(name)
}

fn fit_options(dir: Option<PathBuf>) -> Result<FitOptions> {
    if let Some(d) = &dir {
        fs::create_dir_all(d).at(d)?;
    }
    Ok(FitOptions {
        output_dir: dir,
        stop_after_step: None,
    })
}

/// Trains the teacher from scratch at full resolution.
pub fn pretrain_teacher(cfg: &ExperimentConfig, data: &ExperimentData, out: Option<&Path>) -> Result<TrainState> {
    let student = ModelHandle::init(data.model_spec(), cfg.seed, HeadInit::Random)?;
    let state = TrainState::new(cfg.teacher_config(), student, None)?;
    let opts = fit_options(out.map(|o| model_dir(o, TEACHER_DIR)))?;
    run(state, &data.train, &data.val, &opts)
}

/// Trains one student, initialized as a copy of the frozen teacher.
pub fn train_student(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    teacher: &ModelHandle,
    mode: Mode,
    out: Option<&Path>,
) -> Result<TrainState> {
    if !teacher.is_frozen() {
        return Err(invalid("students need a frozen teacher"));
    }
    let state = TrainState::new(cfg.student_config(mode), teacher.trainable_clone(), Some(teacher.clone()))?;
    let opts = fit_options(out.map(|o| model_dir(o, mode.label())))?;
    run(state, &data.train, &data.val, &opts)
}

#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub teacher: ModelHandle,
    pub students: BTreeMap<ExperimentMode, ModelHandle>,
}

impl TrainedModels {
    pub fn get(&self, mode: ExperimentMode) -> Option<&ModelHandle> {
        match mode {
            ExperimentMode::TeacherOnly => Some(&self.teacher),
            m => self.students.get(&m),
        }
    }
}

/// Pretrains and freezes the teacher, then trains every requested student.
pub fn train_models(cfg: &ExperimentConfig, data: &ExperimentData, out: Option<&Path>) -> Result<TrainedModels> {
    let started = Instant::now();
    let teacher = pretrain_teacher(cfg, data, out)?.student.freeze();
    log::info!("teacher trained in {:.1?}", started.elapsed());
    let mut students = BTreeMap::new();
    for &m in &cfg.modes {
        if let Some(mode) = m.training_mode() {
            let started = Instant::now();
            let state = train_student(cfg, data, &teacher, mode, out)?;
            log::info!("{} student trained in {:.1?}", m.label(), started.elapsed());
            students.insert(m, state.student);
        }
    }
    Ok(TrainedModels { teacher, students })
}

/// Loads the final checkpoints written by [`train_models`].
pub fn load_models(cfg: &ExperimentConfig, out: &Path) -> Result<TrainedModels> {
    let load = |name: &str| Checkpoint::load(&model_dir(out, name).join(FINAL_CHECKPOINT));
    let teacher = load(TEACHER_DIR)?.student()?.freeze();
    let mut students = BTreeMap::new();
    for &m in &cfg.modes {
        if m.training_mode().is_some() {
            let ckpt = load(m.label())?;
            if ckpt.teacher_hash.as_deref() != Some(teacher.param_hash().as_str()) {
                return Err(invalid(format!("{} checkpoint was trained from a different teacher", m.label())));
            }
            students.insert(m, ckpt.student()?);
        }
    }
    Ok(TrainedModels { teacher, students })
}

/// Embeddings of one model on the probe and gallery sets.
pub struct ModelEmbeddings {
    pub sets: EmbeddedSets,
    /// Index of the native resolution within `sets`.
    full: usize,
    /// Resolutions reported on, in requested order.
    pub reported: Vec<EvalResolution>,
}

impl ModelEmbeddings {
    pub fn compute(model: &ModelHandle, data: &ExperimentData, resolutions: &[EvalResolution]) -> Result<Self> {
        let mut all = resolutions.to_vec();
        if !all.contains(&None) {
            all.push(None);
        }
        let sets = EmbeddedSets::compute(model, &data.probes, &data.gallery, &all)?;
        let full = sets.index_of(None).expect("native resolution included");
        Ok(Self {
            sets,
            full,
            reported: resolutions.to_vec(),
        })
    }

    fn at(&self, r: EvalResolution) -> usize {
        self.sets.index_of(r).expect("resolution was embedded")
    }

    fn full_gallery(&self) -> &[Template] {
        &self.sets.gallery[self.full]
    }
}

pub fn verification_report(
    model_name: &str,
    data: &ExperimentData,
    emb: &ModelEmbeddings,
    far_target: f64,
) -> Result<VerificationReport> {
    let rows = emb
        .reported
        .iter()
        .map(|&r| {
            let i = emb.at(r);
            let curve = pair_roc(&data.probes, &emb.sets.probe[i], &data.gallery, &emb.sets.gallery[i], &data.pairs)?;
            let op = tar_at_far(&curve, far_target)?;
            let scores = crate::protocols::score_pairs(
                &data.probes,
                &emb.sets.probe[i],
                &data.gallery,
                &emb.sets.gallery[i],
                &data.pairs,
            )?;
            let acc = verification_accuracy(&scores.genuine, &scores.impostor)?;
            Ok(VerificationRow {
                resolution: resolution_label(r),
                tar: op.tar,
                far: op.far,
                threshold: op.threshold,
                far_unreachable: op.far_unreachable,
                genuine_accepts: op.genuine_accepts,
                impostor_accepts: op.impostor_accepts,
                genuine_count: curve.genuine_count,
                impostor_count: curve.impostor_count,
                accuracy: acc.accuracy,
                accuracy_threshold: acc.threshold,
                roc: curve.points,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VerificationReport {
        report: VERIFICATION.to_string(),
        format_version: REPORT_FORMAT_VERSION,
        model: model_name.to_string(),
        far_target,
        rows,
    })
}

pub fn cmc_report(model_name: &str, emb: &ModelEmbeddings) -> Result<CmcReport> {
    let gallery = emb.full_gallery();
    let rows = emb
        .reported
        .iter()
        .map(|&r| {
            let scores = ScoreMatrix::from_templates(&emb.sets.probe[emb.at(r)], gallery)?;
            let c = cmc_from_scores(&scores)?;
            Ok(CmcRow {
                probe_resolution: resolution_label(r),
                rank1: c.rank(1),
                rank5: c.rank(5),
                probe_count: c.probe_count,
                hits_at_rank: c.hits_at_rank,
                hit_counts: c.hit_counts,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CmcReport {
        report: CMC.to_string(),
        format_version: REPORT_FORMAT_VERSION,
        model: model_name.to_string(),
        gallery_resolution: resolution_label(None),
        gallery_size: gallery.len(),
        rows,
    })
}

pub fn open_set_report(
    model_name: &str,
    data: &ExperimentData,
    emb: &ModelEmbeddings,
    fpir_target: f64,
) -> Result<OpenSetReport> {
    let enrolled = data.enrolled_subjects();
    let gallery: Vec<Template> = emb
        .full_gallery()
        .iter()
        .filter(|t| enrolled.contains(&t.subject_id))
        .cloned()
        .collect();
    let rows = emb
        .reported
        .iter()
        .map(|&r| {
            let (mated, unmated): (Vec<Template>, Vec<Template>) = emb.sets.probe[emb.at(r)]
                .iter()
                .cloned()
                .partition(|t| enrolled.contains(&t.subject_id));
            let det = open_set_from_scores(
                &ScoreMatrix::from_templates(&mated, &gallery)?,
                &ScoreMatrix::from_templates(&unmated, &gallery)?,
            )?;
            let op = tpir_at_fpir(&det, fpir_target).expect("the reject-all point always qualifies");
            Ok(OpenSetRow {
                probe_resolution: resolution_label(r),
                auc: det_auc(&det)?,
                fpir_target,
                tpir: op.tpir,
                fnir: op.fnir,
                fpir: op.fpir,
                threshold: op.threshold,
                mated_count: det.mated_count,
                unmated_count: det.unmated_count,
                det: det.points,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OpenSetReport {
        report: OPEN_SET.to_string(),
        format_version: REPORT_FORMAT_VERSION,
        model: model_name.to_string(),
        gallery_resolution: resolution_label(None),
        enrolled_subjects: enrolled,
        rows,
    })
}

pub fn retrieval_report(
    model_name: &str,
    model: &ModelHandle,
    data: &ExperimentData,
    emb: &ModelEmbeddings,
) -> Result<RetrievalReport> {
    let items = embed_templates(model, &data.gallery_items, None)?;
    let rows = emb
        .reported
        .iter()
        .map(|&r| {
            let scores = ScoreMatrix::from_templates(&emb.sets.probe[emb.at(r)], &items)?;
            let rankings = rankings_from_scores(&scores);
            let map = retrieval_map(&rankings)?;
            let top1 = rankings.iter().filter(|r| r.first() == Some(&true)).count() as f64 / rankings.len() as f64;
            Ok(RetrievalRow {
                probe_resolution: resolution_label(r),
                map: map.value,
                top1,
                query_count: map.query_count,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RetrievalReport {
        report: RETRIEVAL.to_string(),
        format_version: REPORT_FORMAT_VERSION,
        model: model_name.to_string(),
        gallery_resolution: resolution_label(None),
        gallery_items: items.len(),
        rows,
    })
}

pub fn crossres_report(
    model_name: &str,
    data: &ExperimentData,
    emb: &ModelEmbeddings,
    far_target: f64,
) -> Result<CrossResReport> {
    let idx: Vec<usize> = emb.reported.iter().map(|&r| emb.at(r)).collect();
    let sub = EmbeddedSets {
        resolutions: emb.reported.clone(),
        probe: idx.iter().map(|&i| emb.sets.probe[i].clone()).collect(),
        gallery: idx.iter().map(|&i| emb.sets.gallery[i].clone()).collect(),
    };
    let matrix = cross_resolution_from_embeddings(&sub, &data.probes, &data.gallery, &data.pairs, far_target)?;
    Ok(CrossResReport {
        report: CROSSRES.to_string(),
        format_version: REPORT_FORMAT_VERSION,
        model: model_name.to_string(),
        matrix,
    })
}

pub fn reports_dir(out: &Path, mode: ExperimentMode) -> PathBuf {
    out.join(REPORTS_DIR).join(mode.label())
}

fn report_paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{name}.json")), dir.join(format!("{name}.csv")))
}

/// Writes the verification, CMC, open-set and retrieval bundles of one model.
pub fn evaluate_mode(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    mode: ExperimentMode,
    model: &ModelHandle,
    emb: &ModelEmbeddings,
    out: &Path,
) -> Result<()> {
    let dir = reports_dir(out, mode);
    fs::create_dir_all(&dir).at(&dir)?;
    let name = mode.label();

    let v = verification_report(name, data, emb, cfg.far_target)?;
    let (json, csv) = report_paths(&dir, VERIFICATION);
    write_json(&json, &v)?;
    write_verification_csv(&csv, &v)?;

    let c = cmc_report(name, emb)?;
    let (json, csv) = report_paths(&dir, CMC);
    write_json(&json, &c)?;
    write_cmc_csv(&csv, &c)?;

    let o = open_set_report(name, data, emb, cfg.fpir_target)?;
    let (json, csv) = report_paths(&dir, OPEN_SET);
    write_json(&json, &o)?;
    write_open_set_csv(&csv, &o)?;

    let r = retrieval_report(name, model, data, emb)?;
    let (json, csv) = report_paths(&dir, RETRIEVAL);
    write_json(&json, &r)?;
    write_retrieval_csv(&csv, &r)
}

/// Writes the cross-resolution bundle of one model.
pub fn crossres_mode(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    mode: ExperimentMode,
    emb: &ModelEmbeddings,
    out: &Path,
) -> Result<CrossResReport> {
    let dir = reports_dir(out, mode);
    fs::create_dir_all(&dir).at(&dir)?;
    let report = crossres_report(mode.label(), data, emb, cfg.far_target)?;
    let (json, csv) = report_paths(&dir, CROSSRES);
    write_json(&json, &report)?;
    write_crossres_csv(&csv, &report)?;
    Ok(report)
}

/// Collects the per-model bundles already on disk into the summary tables:
/// `summary.json`, `summary.csv`, `table_tar.md` and one
/// `table_crossres_<mode>.md` per model (students bracketed with the
/// teacher when it was evaluated too).
pub fn write_summary(cfg: &ExperimentConfig, out: &Path) -> Result<SummaryReport> {
    let mut tar_table = Vec::new();
    let mut crossres = Vec::new();
    let mut resolutions: Option<Vec<String>> = None;
    for &m in &cfg.modes {
        let dir = reports_dir(out, m);
        let v: VerificationReport = read_json(&dir.join(format!("{VERIFICATION}.json")))?;
        let labels: Vec<String> = v.rows.iter().map(|r| r.resolution.clone()).collect();
        match &resolutions {
            Some(prev) if *prev != labels => {
                return Err(invalid("models were evaluated on different resolution grids"))
            }
            _ => resolutions = Some(labels),
        }
        tar_table.push(TarRow {
            model: m.label().to_string(),
            tar: v.rows.iter().map(|r| r.tar).collect(),
        });
        let cr_path = dir.join(format!("{CROSSRES}.json"));
        if cr_path.exists() {
            crossres.push(read_json::<CrossResReport>(&cr_path)?);
        }
    }
    let resolutions = resolutions.unwrap_or_default();
    let summary = SummaryReport {
        report: SUMMARY.to_string(),
        format_version: REPORT_FORMAT_VERSION,
        far_target: cfg.far_target,
        resolutions: resolutions.clone(),
        tar_table,
        crossres,
    };
    let dir = out.join(REPORTS_DIR);
    fs::create_dir_all(&dir).at(&dir)?;
    let (json, csv) = report_paths(&dir, SUMMARY);
    write_json(&json, &summary)?;
    write_summary_csv(&csv, &summary)?;
    let table = tar_table_markdown(cfg.far_target, &resolutions, &summary.tar_table);
    fs::write(dir.join("table_tar.md"), table).at(&dir)?;
    let teacher = summary
        .crossres
        .iter()
        .find(|c| c.model == ExperimentMode::TeacherOnly.label());
    for c in &summary.crossres {
        let reference = teacher
            .filter(|t| t.model != c.model)
            .map(|t| (t.model.as_str(), &t.matrix));
        let path = dir.join(format!("table_crossres_{}.md", c.model));
        fs::write(&path, crossres_markdown(&c.matrix, reference)).at(&path)?;
    }
    Ok(summary)
}

/// Run timing and environment, kept apart from the deterministic reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetadata {
    pub started_unix_secs: f64,
    pub finished_unix_secs: f64,
    pub elapsed_secs: f64,
    pub threads: usize,
    pub version: String,
    pub succeeded: bool,
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub summary: SummaryReport,
    pub models: TrainedModels,
    pub dataset: DatasetSummary,
}

/// Writes the resolved config, the dataset summary and the pair list.
pub fn write_inputs(cfg: &ExperimentConfig, data: &ExperimentData, out: &Path) -> Result<()> {
    fs::create_dir_all(out).at(out)?;
    let path = out.join(EXPERIMENT_CONFIG_FILE);
    fs::write(&path, cfg.to_toml_string()?).at(&path)?;
    write_json(&out.join(DATASET_SUMMARY_FILE), &data.summary())?;
    save_pairs(&out.join(PAIRS_FILE), &data.pairs)
}

/// Evaluates every requested mode (all protocols plus the cross-resolution
/// matrix) and writes the summary tables.
pub fn evaluate_models(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    models: &TrainedModels,
    out: &Path,
) -> Result<SummaryReport> {
    let resolutions = cfg.eval_resolutions()?;
    for &m in &cfg.modes {
        let model = models
            .get(m)
            .ok_or_else(|| invalid(format!("no trained model for {}", m.label())))?;
        let started = Instant::now();
        let emb = ModelEmbeddings::compute(model, data, &resolutions)?;
        evaluate_mode(cfg, data, m, model, &emb, out)?;
        crossres_mode(cfg, data, m, &emb, out)?;
        log::info!("{} evaluated in {:.1?}", m.label(), started.elapsed());
    }
    write_summary(cfg, out)
}

fn run_stages(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let data = ExperimentData::load(&cfg.dataset)?;
    write_inputs(cfg, &data, out)?;
    let models = train_models(cfg, &data, Some(out))?;
    let summary = evaluate_models(cfg, &data, &models, out)?;
    Ok(ExperimentOutcome {
        summary,
        models,
        dataset: data.summary(),
    })
}

/// Runs the whole pipeline into `out`. On failure, whatever was written is
/// kept and a `FAILED` marker holding the error is added.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentOutcome> {
    fs::create_dir_all(out).at(out)?;
    let marker = out.join(FAILURE_MARKER);
    if marker.exists() {
        fs::remove_file(&marker).at(&marker)?;
    }
    let started = unix_now();
    let clock = Instant::now();
    let result = run_stages(cfg, out);
    let meta = RunMetadata {
        started_unix_secs: started,
        finished_unix_secs: unix_now(),
        elapsed_secs: clock.elapsed().as_secs_f64(),
        threads: rayon::current_num_threads(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        succeeded: result.is_ok(),
    };
    write_json(&out.join(METADATA_FILE), &meta)?;
    if let Err(e) = &result {
        fs::write(&marker, format!("{e}\n")).at(&marker)?;
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(matches!(
            ExperimentConfig::from_toml_str("sed = 3\n"),
            Err(Error::Config(_))
        ));
        assert!(ExperimentConfig::from_toml_str("[student]\nlamda = 0.1\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[dataset]\nkind = \"synthetic\"\nnum_identity = 3\n").is_err());
        let cfg = ExperimentConfig::from_toml_str(
            "modes = [\"T-C\"]\n[dataset]\nkind = \"synthetic\"\nnum_identities = 4\n",
        )
        .unwrap();
        assert_eq!(cfg.modes, vec![ExperimentMode::TeacherCurriculum]);
        match cfg.dataset {
            DatasetSource::Synthetic(s) => assert_eq!(s.num_identities, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_settings_are_rejected() {
        for text in ["modes = []", "far_target = 2.0", "resolutions = [\"8\", \"8\"]", "resolutions = [\"huge\"]"] {
            assert!(ExperimentConfig::from_toml_str(text).is_err(), "{text}");
        }
    }

    #[test]
    fn mode_labels_parse() {
        for m in ExperimentMode::ALL {
            assert_eq!(m.label().parse::<ExperimentMode>().unwrap(), m);
        }
        assert!("T_C".parse::<ExperimentMode>().is_err());
    }

    #[test]
    fn derived_seeds() {
        let cfg = ExperimentConfig {
            seed: 9,
            ..Default::default()
        };
        assert_eq!(cfg.teacher_config().seed, 9);
        let s = cfg.student_config(Mode::TeacherCurriculum);
        assert_eq!((s.seed, s.mode), (10, Mode::TeacherCurriculum));
    }
}
