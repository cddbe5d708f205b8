//! Verification and identification curves over raw similarity scores.
//!
//! Every rate is stored together with the integer counts it was computed
//! from, so curves can be compared exactly.

use std::collections::{BTreeSet, HashMap};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use super::template::{similarity, Template};
use crate::error::{invalid, Error, Result};

fn check_scores(name: &str, scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(invalid(format!("{name} score list is empty")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(invalid(format!("{name} scores must be finite")));
    }
    Ok(())
}

/// Distinct values of all score lists in ascending order, followed by one
/// threshold above the maximum that rejects everything.
fn sweep_thresholds(lists: &[&[f64]]) -> Vec<f64> {
    let mut all: Vec<f64> = lists.iter().flat_map(|l| l.iter().copied()).collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    let top = *all.last().expect("non-empty score lists");
    all.push(top.next_up());
    all
}

/// Number of entries of an ascending slice that are `>= t`.
fn count_at_least(sorted: &[f64], t: f64) -> usize {
    sorted.len() - sorted.partition_point(|&s| s < t)
}

fn sorted(scores: &[f64]) -> Vec<f64> {
    let mut v = scores.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn rate(count: usize, total: usize) -> f64 {
    count as f64 / total as f64
}

/// Exact test of `count / total <= target` for a finite, non-negative target.
pub(crate) fn ratio_at_most(count: usize, total: usize, target: f64) -> bool {
    if count == 0 {
        return target >= 0.0;
    }
    if !(target > 0.0) {
        return false;
    }
    if target >= 1.0 && count <= total {
        return true;
    }
    let bits = target.to_bits();
    let exp_bits = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    // target = mantissa * 2^(-shift)
    let (mantissa, shift) = if exp_bits == 0 {
        (frac, 1074)
    } else {
        (frac | (1u64 << 52), 1075 - exp_bits)
    };
    let rhs = u128::from(mantissa) * total as u128;
    let count = count as u128;
    if shift <= 0 {
        return count <= rhs << (-shift).min(64);
    }
    if shift >= 128 || count.leading_zeros() < shift as u32 + 1 {
        return false;
    }
    (count << shift) <= rhs
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub far: f64,
    pub tar: f64,
    pub impostor_accepts: usize,
    pub genuine_accepts: usize,
}

/// Step-function ROC; points are ordered by ascending threshold, so FAR and
/// TAR are non-increasing along the list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub genuine_count: usize,
    pub impostor_count: usize,
}

/// Sweeps every distinct score as a threshold; a pair is accepted when its
/// score is `>=` the threshold.
pub fn roc(genuine: &[f64], impostor: &[f64]) -> Result<RocCurve> {
    check_scores("genuine", genuine)?;
    check_scores("impostor", impostor)?;
    let (g, i) = (sorted(genuine), sorted(impostor));
    let points = sweep_thresholds(&[genuine, impostor])
        .into_iter()
        .map(|t| {
            let ga = count_at_least(&g, t);
            let ia = count_at_least(&i, t);
            RocPoint {
                threshold: t,
                far: rate(ia, i.len()),
                tar: rate(ga, g.len()),
                impostor_accepts: ia,
                genuine_accepts: ga,
            }
        })
        .collect();
    Ok(RocCurve {
        points,
        genuine_count: g.len(),
        impostor_count: i.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub far_target: f64,
    pub tar: f64,
    pub far: f64,
    pub threshold: f64,
    pub genuine_accepts: usize,
    pub impostor_accepts: usize,
    /// Set when no non-zero FAR can be at or below the target with the
    /// available impostor count, so the FAR = 0 point is reported.
    pub far_unreachable: bool,
}

/// TAR at the smallest threshold whose FAR is at most `far_target`.
pub fn tar_at_far(curve: &RocCurve, far_target: f64) -> Result<OperatingPoint> {
    if !(0.0..=1.0).contains(&far_target) {
        return Err(invalid(format!("far_target {far_target} outside [0, 1]")));
    }
    let p = curve
        .points
        .iter()
        .find(|p| ratio_at_most(p.impostor_accepts, curve.impostor_count, far_target))
        .ok_or_else(|| invalid("ROC curve has no reject-all point"))?;
    Ok(OperatingPoint {
        far_target,
        tar: p.tar,
        far: p.far,
        threshold: p.threshold,
        genuine_accepts: p.genuine_accepts,
        impostor_accepts: p.impostor_accepts,
        far_unreachable: far_target > 0.0 && !ratio_at_most(1, curve.impostor_count, far_target),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerificationAccuracy {
    pub accuracy: f64,
    pub threshold: f64,
    pub correct: usize,
    pub total: usize,
}

/// Best fraction of correctly decided pairs over all thresholds.
pub fn verification_accuracy(genuine: &[f64], impostor: &[f64]) -> Result<VerificationAccuracy> {
    let curve = roc(genuine, impostor)?;
    let total = curve.genuine_count + curve.impostor_count;
    let best = curve
        .points
        .iter()
        .map(|p| (p.genuine_accepts + curve.impostor_count - p.impostor_accepts, p.threshold))
        .fold(None, |best: Option<(usize, f64)>, cand| match best {
            Some(b) if b.0 >= cand.0 => Some(b),
            _ => Some(cand),
        })
        .expect("curve has points");
    Ok(VerificationAccuracy {
        accuracy: rate(best.0, total),
        threshold: best.1,
        correct: best.0,
        total,
    })
}

/// Probe-by-gallery similarity scores, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub probe_ids: Vec<u32>,
    pub gallery_ids: Vec<u32>,
    pub scores: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(probe_ids: Vec<u32>, gallery_ids: Vec<u32>, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != probe_ids.len() * gallery_ids.len() {
            return Err(invalid(format!(
                "score matrix has {} entries, expected {}x{}",
                scores.len(),
                probe_ids.len(),
                gallery_ids.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(invalid("scores must be finite"));
        }
        Ok(Self {
            probe_ids,
            gallery_ids,
            scores,
        })
    }

    pub fn from_templates(probes: &[Template], gallery: &[Template]) -> Result<Self> {
        let mut scores = Vec::with_capacity(probes.len() * gallery.len());
        for p in probes {
            for g in gallery {
                scores.push(similarity(p, g)?);
            }
        }
        Self::new(
            probes.iter().map(|t| t.subject_id).collect(),
            gallery.iter().map(|t| t.subject_id).collect(),
            scores,
        )
    }

    pub fn row(&self, probe: usize) -> &[f64] {
        let n = self.gallery_ids.len();
        &self.scores[probe * n..(probe + 1) * n]
    }

    fn gallery_index(&self) -> Result<HashMap<u32, usize>> {
        let mut index = HashMap::with_capacity(self.gallery_ids.len());
        for (i, &id) in self.gallery_ids.iter().enumerate() {
            if index.insert(id, i).is_some() {
                return Err(Error::ProtocolViolation(format!(
                    "gallery holds more than one template for subject {id}"
                )));
            }
        }
        Ok(index)
    }

    /// Pessimistic rank of the mated gallery entry: one plus the number of
    /// non-mated entries scoring at least as high.
    fn mated_rank(&self, probe: usize, mated: usize) -> usize {
        let row = self.row(probe);
        let s = row[mated];
        1 + row
            .iter()
            .enumerate()
            .filter(|&(j, &x)| j != mated && x >= s)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmcCurve {
    /// Entry `r - 1` is the fraction of probes whose mate is within rank `r`.
    pub hits_at_rank: Vec<f64>,
    pub hit_counts: Vec<usize>,
    /// Rank of each probe's mate.
    pub ranks: Vec<usize>,
    pub probe_count: usize,
}

impl CmcCurve {
    pub fn rank(&self, r: usize) -> f64 {
        self.hits_at_rank[r.clamp(1, self.hits_at_rank.len()) - 1]
    }
}

/// Closed-set identification curve; ties with non-mated entries count
/// against the probe.
pub fn cmc_from_scores(scores: &ScoreMatrix) -> Result<CmcCurve> {
    if scores.probe_ids.is_empty() || scores.gallery_ids.is_empty() {
        return Err(invalid("cmc needs at least one probe and one gallery template"));
    }
    let index = scores.gallery_index()?;
    let ranks = scores
        .probe_ids
        .iter()
        .enumerate()
        .map(|(p, id)| {
            let mated = *index.get(id).ok_or_else(|| {
                Error::ProtocolViolation(format!("probe subject {id} is not enrolled in the gallery"))
            })?;
            Ok(scores.mated_rank(p, mated))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = scores.gallery_ids.len();
    let mut hit_counts = vec![0usize; n];
    for &r in &ranks {
        hit_counts[r - 1] += 1;
    }
    for r in 1..n {
        hit_counts[r] += hit_counts[r - 1];
    }
    let probe_count = ranks.len();
    Ok(CmcCurve {
        hits_at_rank: hit_counts.iter().map(|&c| rate(c, probe_count)).collect(),
        hit_counts,
        ranks,
        probe_count,
    })
}

pub fn cmc(probes: &[Template], gallery: &[Template]) -> Result<CmcCurve> {
    cmc_from_scores(&ScoreMatrix::from_templates(probes, gallery)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    pub threshold: f64,
    pub fpir: f64,
    pub fnir: f64,
    pub tpir: f64,
    pub false_positives: usize,
    pub false_negatives: usize,
}

/// Open-set identification curve ordered by ascending threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetCurve {
    pub points: Vec<DetPoint>,
    pub mated_count: usize,
    pub unmated_count: usize,
}

/// Watch-list identification. A probe's candidate score is its best gallery
/// score. An unmated probe is a false positive when its candidate score is at
/// least the threshold; a mated probe is a false negative when its candidate
/// score is below the threshold or its mate is not ranked first (ties count
/// against it).
pub fn open_set_from_scores(mated: &ScoreMatrix, unmated: &ScoreMatrix) -> Result<DetCurve> {
    if mated.gallery_ids.is_empty() {
        return Err(invalid("open-set identification needs a non-empty gallery"));
    }
    if mated.gallery_ids != unmated.gallery_ids {
        return Err(invalid("mated and unmated probes were scored against different galleries"));
    }
    if mated.probe_ids.is_empty() || unmated.probe_ids.is_empty() {
        return Err(invalid("open-set identification needs mated and unmated probes"));
    }
    let index = mated.gallery_index()?;
    if let Some(id) = unmated.probe_ids.iter().find(|id| index.contains_key(id)) {
        return Err(Error::ProtocolViolation(format!(
            "unmated probe subject {id} is enrolled in the gallery"
        )));
    }
    let best = |m: &ScoreMatrix, p: usize| m.row(p).iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut mated_hits = Vec::new();
    let mut mated_candidates = Vec::with_capacity(mated.probe_ids.len());
    for (p, id) in mated.probe_ids.iter().enumerate() {
        let g = *index.get(id).ok_or_else(|| {
            Error::ProtocolViolation(format!("mated probe subject {id} is not enrolled in the gallery"))
        })?;
        let candidate = best(mated, p);
        mated_candidates.push(candidate);
        if mated.mated_rank(p, g) == 1 {
            mated_hits.push(candidate);
        }
    }
    let unmated_candidates: Vec<f64> = (0..unmated.probe_ids.len()).map(|p| best(unmated, p)).collect();
    let (hits, unm) = (sorted(&mated_hits), sorted(&unmated_candidates));
    let (m, u) = (mated.probe_ids.len(), unmated.probe_ids.len());
    let points = sweep_thresholds(&[&mated_candidates, &unmated_candidates])
        .into_iter()
        .map(|t| {
            let fp = count_at_least(&unm, t);
            let fnr = m - count_at_least(&hits, t);
            let fnir = rate(fnr, m);
            DetPoint {
                threshold: t,
                fpir: rate(fp, u),
                fnir,
                tpir: 1.0 - fnir,
                false_positives: fp,
                false_negatives: fnr,
            }
        })
        .collect();
    Ok(DetCurve {
        points,
        mated_count: m,
        unmated_count: u,
    })
}

pub fn open_set_identification(
    mated: &[Template],
    unmated: &[Template],
    gallery: &[Template],
) -> Result<DetCurve> {
    open_set_from_scores(
        &ScoreMatrix::from_templates(mated, gallery)?,
        &ScoreMatrix::from_templates(unmated, gallery)?,
    )
}

/// Area under TPIR as a function of FPIR, by the trapezoid rule over the
/// curve's points.
pub fn det_auc(curve: &DetCurve) -> Result<f64> {
    if curve.points.is_empty() {
        return Err(invalid("DET curve has no points"));
    }
    let mut pts: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.fpir, p.tpir)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    Ok(pts
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum())
}

/// TPIR at the smallest threshold whose FPIR is at most `fpir_target`.
pub fn tpir_at_fpir(curve: &DetCurve, fpir_target: f64) -> Option<DetPoint> {
    curve
        .points
        .iter()
        .find(|p| ratio_at_most(p.false_positives, curve.unmated_count, fpir_target))
        .copied()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanAveragePrecision {
    pub value: f64,
    pub exact: BigRational,
    pub query_count: usize,
}

/// Mean over queries of average precision; each ranking lists relevance
/// flags in retrieved order.
pub fn retrieval_map(rankings: &[Vec<bool>]) -> Result<MeanAveragePrecision> {
    if rankings.is_empty() {
        return Err(invalid("retrieval needs at least one query"));
    }
    let mut total = BigRational::zero();
    for (q, ranking) in rankings.iter().enumerate() {
        let mut hits = 0i64;
        let mut sum = BigRational::zero();
        for (pos, &relevant) in ranking.iter().enumerate() {
            if relevant {
                hits += 1;
                sum += BigRational::new(BigInt::from(hits), BigInt::from(pos as i64 + 1));
            }
        }
        if hits == 0 {
            return Err(Error::ProtocolViolation(format!("query {q} has no relevant items")));
        }
        total += sum / BigInt::from(hits);
    }
    let exact = total / BigInt::from(rankings.len() as i64);
    Ok(MeanAveragePrecision {
        value: exact.to_f64().expect("mAP lies in [0, 1]"),
        exact,
        query_count: rankings.len(),
    })
}

/// Relevance flags of the gallery ordered by descending score for each
/// probe; ties place non-relevant entries first.
pub fn rankings_from_scores(scores: &ScoreMatrix) -> Vec<Vec<bool>> {
    (0..scores.probe_ids.len())
        .map(|p| {
            let id = scores.probe_ids[p];
            let mut order: Vec<(f64, bool)> = scores
                .row(p)
                .iter()
                .zip(&scores.gallery_ids)
                .map(|(&s, &g)| (s, g == id))
                .collect();
            order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            order.into_iter().map(|(_, r)| r).collect()
        })
        .collect()
}

/// Subject ids present in a set of templates, in ascending order.
pub fn subjects(templates: &[Template]) -> BTreeSet<u32> {
    templates.iter().map(|t| t.subject_id).collect()
}
