//! Template sets, pair lists, and cross-resolution verification.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::curves::{roc, tar_at_far, OperatingPoint, RocCurve};
use super::template::{build_template, similarity, Template};
use crate::error::{invalid, Error, IoContext, Result};
use crate::imaging::{prepare_eval_input, ImageRecord};
use crate::model::ModelHandle;

/// `None` stands for the native (undegraded) resolution.
pub type EvalResolution = Option<u32>;

/// The evaluation grid used for tables: 8, 16, 24, 32, 64, 128 px and native.
pub const EVAL_RESOLUTIONS: [EvalResolution; 7] =
    [Some(8), Some(16), Some(24), Some(32), Some(64), Some(128), None];

pub fn resolution_label(r: EvalResolution) -> String {
    match r {
        Some(px) => px.to_string(),
        None => "full".to_string(),
    }
}

pub fn parse_resolution(s: &str) -> Result<EvalResolution> {
    let s = s.trim();
    if s.eq_ignore_ascii_case("full") {
        return Ok(None);
    }
    match s.parse::<u32>() {
        Ok(px) if px > 0 => Ok(Some(px)),
        _ => Err(invalid(format!("resolution {s:?} is neither a positive integer nor \"full\""))),
    }
}

/// The images making up one template.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSource {
    pub template_id: u32,
    pub subject_id: u32,
    pub images: Vec<ImageRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    pub sources: Vec<TemplateSource>,
    index: HashMap<u32, usize>,
}

impl TemplateSet {
    pub fn new(sources: Vec<TemplateSource>) -> Result<Self> {
        let mut index = HashMap::with_capacity(sources.len());
        for (i, s) in sources.iter().enumerate() {
            if s.images.is_empty() {
                return Err(invalid(format!("template {} has no images", s.template_id)));
            }
            if index.insert(s.template_id, i).is_some() {
                return Err(invalid(format!("template id {} is used twice", s.template_id)));
            }
        }
        Ok(Self { sources, index })
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn position(&self, template_id: u32) -> Option<usize> {
        self.index.get(&template_id).copied()
    }

    pub fn get(&self, template_id: u32) -> Option<&TemplateSource> {
        self.position(template_id).map(|i| &self.sources[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairLabel {
    Genuine,
    Impostor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationPair {
    pub probe_template_id: u32,
    pub gallery_template_id: u32,
    pub label: PairLabel,
}

impl VerificationPair {
    pub fn swapped(&self) -> Self {
        Self {
            probe_template_id: self.gallery_template_id,
            gallery_template_id: self.probe_template_id,
            label: self.label,
        }
    }
}

pub fn read_pairs<R: Read>(reader: R) -> Result<Vec<VerificationPair>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let pairs = rdr.deserialize().collect::<std::result::Result<Vec<VerificationPair>, _>>()?;
    Ok(pairs)
}

pub fn write_pairs<W: Write>(writer: W, pairs: &[VerificationPair]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for p in pairs {
        w.serialize(p)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn load_pairs(path: &Path) -> Result<Vec<VerificationPair>> {
    read_pairs(std::fs::File::open(path).at(path)?)
}

pub fn save_pairs(path: &Path, pairs: &[VerificationPair]) -> Result<()> {
    write_pairs(std::fs::File::create(path).at(path)?, pairs)
}

/// Every probe template against every gallery template, labelled by subject.
pub fn all_pairs(probes: &TemplateSet, gallery: &TemplateSet) -> Vec<VerificationPair> {
    let mut pairs = Vec::with_capacity(probes.len() * gallery.len());
    for p in &probes.sources {
        for g in &gallery.sources {
            pairs.push(VerificationPair {
                probe_template_id: p.template_id,
                gallery_template_id: g.template_id,
                label: if p.subject_id == g.subject_id {
                    PairLabel::Genuine
                } else {
                    PairLabel::Impostor
                },
            });
        }
    }
    pairs
}

const EMBED_CHUNK: usize = 64;

/// Degrades every image of every source to `resolution`, embeds it, and
/// aggregates one template per source, in source order.
pub fn embed_templates(model: &ModelHandle, set: &TemplateSet, resolution: EvalResolution) -> Result<Vec<Template>> {
    let images: Vec<&ImageRecord> = set.sources.iter().flat_map(|s| &s.images).collect();
    let mut vectors = Vec::with_capacity(images.len());
    for chunk in images.chunks(EMBED_CHUNK) {
        let inputs = chunk
            .par_iter()
            .map(|r| prepare_eval_input(r, resolution))
            .collect::<Result<Vec<_>>>()?;
        vectors.extend(model.extract_features(&inputs)?.into_iter().map(|e| e.vector));
    }
    let mut offset = 0;
    set.sources
        .iter()
        .map(|s| {
            let v = &vectors[offset..offset + s.images.len()];
            offset += s.images.len();
            build_template(s.subject_id, v)
        })
        .collect()
}

/// Scores of genuine and impostor pairs, in pair-list order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScores {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

/// Scores each pair with the probe side taken from `probe_templates` and the
/// gallery side from `gallery_templates`, both indexed like `set`.
pub fn score_pairs(
    set_probe: &TemplateSet,
    probe_templates: &[Template],
    set_gallery: &TemplateSet,
    gallery_templates: &[Template],
    pairs: &[VerificationPair],
) -> Result<PairScores> {
    if pairs.is_empty() {
        return Err(invalid("pair list is empty"));
    }
    let mut out = PairScores {
        genuine: Vec::new(),
        impostor: Vec::new(),
    };
    for p in pairs {
        let lookup = |set: &TemplateSet, id: u32| {
            set.position(id)
                .ok_or_else(|| Error::ProtocolViolation(format!("pair references unknown template {id}")))
        };
        let (a, b) = (lookup(set_probe, p.probe_template_id)?, lookup(set_gallery, p.gallery_template_id)?);
        let same = set_probe.sources[a].subject_id == set_gallery.sources[b].subject_id;
        if same != (p.label == PairLabel::Genuine) {
            return Err(Error::ProtocolViolation(format!(
                "pair ({}, {}) is labelled {:?} but subjects {} match",
                p.probe_template_id,
                p.gallery_template_id,
                p.label,
                if same { "do" } else { "do not" }
            )));
        }
        let s = similarity(&probe_templates[a], &gallery_templates[b])?;
        if same {
            out.genuine.push(s)
        } else {
            out.impostor.push(s)
        }
    }
    Ok(out)
}

/// Templates of a probe set and a gallery set at each evaluated resolution.
#[derive(Debug, Clone)]
pub struct EmbeddedSets {
    pub resolutions: Vec<EvalResolution>,
    pub probe: Vec<Vec<Template>>,
    pub gallery: Vec<Vec<Template>>,
}

impl EmbeddedSets {
    pub fn compute(
        model: &ModelHandle,
        probes: &TemplateSet,
        gallery: &TemplateSet,
        resolutions: &[EvalResolution],
    ) -> Result<Self> {
        let mut out = Self {
            resolutions: resolutions.to_vec(),
            probe: Vec::new(),
            gallery: Vec::new(),
        };
        for &r in resolutions {
            out.probe.push(embed_templates(model, probes, r)?);
            out.gallery.push(embed_templates(model, gallery, r)?);
        }
        Ok(out)
    }

    pub fn index_of(&self, r: EvalResolution) -> Option<usize> {
        self.resolutions.iter().position(|&x| x == r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossResCell {
    pub probe_resolution: String,
    pub gallery_resolution: String,
    #[serde(flatten)]
    pub operating_point: OperatingPoint,
    pub genuine_count: usize,
    pub impostor_count: usize,
}

/// Lower-triangular TAR@FAR matrix. Row `i` holds cells `(i, j)` for
/// `j <= i`; cell `(i, j)` pairs probes at `resolutions[j]` with gallery
/// templates at `resolutions[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossResMatrix {
    pub resolutions: Vec<String>,
    pub far_target: f64,
    pub rows: Vec<Vec<CrossResCell>>,
}

impl CrossResMatrix {
    pub fn tar(&self, row: usize, col: usize) -> Option<f64> {
        self.rows.get(row)?.get(col).map(|c| c.operating_point.tar)
    }
}

pub fn pair_roc(
    probes: &TemplateSet,
    probe_templates: &[Template],
    gallery: &TemplateSet,
    gallery_templates: &[Template],
    pairs: &[VerificationPair],
) -> Result<RocCurve> {
    let s = score_pairs(probes, probe_templates, gallery, gallery_templates, pairs)?;
    roc(&s.genuine, &s.impostor)
}

/// One matrix cell: probe templates at one resolution against gallery
/// templates at another.
pub fn cross_resolution_cell(
    probes: &TemplateSet,
    probe_templates: &[Template],
    gallery: &TemplateSet,
    gallery_templates: &[Template],
    pairs: &[VerificationPair],
    far_target: f64,
) -> Result<(OperatingPoint, RocCurve)> {
    let curve = pair_roc(probes, probe_templates, gallery, gallery_templates, pairs)?;
    Ok((tar_at_far(&curve, far_target)?, curve))
}

pub fn cross_resolution_from_embeddings(
    embedded: &EmbeddedSets,
    probes: &TemplateSet,
    gallery: &TemplateSet,
    pairs: &[VerificationPair],
    far_target: f64,
) -> Result<CrossResMatrix> {
    let res = &embedded.resolutions;
    let cells: Vec<(usize, usize)> = (0..res.len()).flat_map(|i| (0..=i).map(move |j| (i, j))).collect();
    let computed = cells
        .par_iter()
        .map(|&(i, j)| {
            let (op, curve) = cross_resolution_cell(
                probes,
                &embedded.probe[j],
                gallery,
                &embedded.gallery[i],
                pairs,
                far_target,
            )?;
            Ok(CrossResCell {
                probe_resolution: resolution_label(res[j]),
                gallery_resolution: resolution_label(res[i]),
                operating_point: op,
                genuine_count: curve.genuine_count,
                impostor_count: curve.impostor_count,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows: Vec<Vec<CrossResCell>> = (0..res.len()).map(|i| Vec::with_capacity(i + 1)).collect();
    for ((i, _), cell) in cells.into_iter().zip(computed) {
        rows[i].push(cell);
    }
    Ok(CrossResMatrix {
        resolutions: res.iter().map(|&r| resolution_label(r)).collect(),
        far_target,
        rows,
    })
}

/// Embeds both sides at every resolution and fills the lower triangle,
/// diagonal included.
pub fn cross_resolution_matrix(
    model: &ModelHandle,
    probes: &TemplateSet,
    gallery: &TemplateSet,
    pairs: &[VerificationPair],
    resolutions: &[EvalResolution],
    far_target: f64,
) -> Result<CrossResMatrix> {
    if resolutions.is_empty() {
        return Err(invalid("no resolutions requested"));
    }
    let embedded = EmbeddedSets::compute(model, probes, gallery, resolutions)?;
    cross_resolution_from_embeddings(&embedded, probes, gallery, pairs, far_target)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolution_labels_round_trip() {
        for r in EVAL_RESOLUTIONS {
            assert_eq!(parse_resolution(&resolution_label(r)).unwrap(), r);
        }
        assert!(parse_resolution("0").is_err());
        assert!(parse_resolution("big").is_err());
    }

    #[test]
    fn pair_csv_round_trip() {
        let pairs = vec![
            VerificationPair {
                probe_template_id: 3,
                gallery_template_id: 1,
                label: PairLabel::Genuine,
            },
            VerificationPair {
                probe_template_id: 4,
                gallery_template_id: 1,
                label: PairLabel::Impostor,
            },
        ];
        let mut buf = Vec::new();
        write_pairs(&mut buf, &pairs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("probe_template_id,gallery_template_id,label\n3,1,genuine\n"));
        assert_eq!(read_pairs(buf.as_slice()).unwrap(), pairs);
        assert!(read_pairs("probe_template_id,gallery_template_id,label\n1,2,maybe\n".as_bytes()).is_err());
    }
}
