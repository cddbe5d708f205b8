//! Exhaustive reference implementations of the evaluation metrics, written
//! independently of the library: every threshold is tried against every
//! score with plain loops, and rates are kept as exact rationals.

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use resdistill_core::protocols::{
    cmc_from_scores, open_set_from_scores, retrieval_map, rankings_from_scores, roc, tar_at_far,
    verification_accuracy, ScoreMatrix,
};

pub fn ratio(num: usize, den: usize) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

fn exact(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

/// Candidate thresholds: each distinct score plus one value above them all.
fn thresholds(scores: &[f64]) -> Vec<f64> {
    let mut t: Vec<f64> = Vec::new();
    for &s in scores {
        if !t.contains(&s) {
            t.push(s);
        }
    }
    t.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let top = *t.last().unwrap();
    t.push(top.next_up());
    t
}

fn accepted(scores: &[f64], t: f64) -> usize {
    scores.iter().filter(|&&s| s >= t).count()
}

/// Checks that a library rate equals `num / den` rounded once to f64.
fn same_rate(what: &str, got: f64, num: usize, den: usize) -> Result<(), String> {
    if got != num as f64 / den as f64 {
        return Err(format!("{what}: {got} != {num}/{den}"));
    }
    Ok(())
}

pub fn check_roc(genuine: &[f64], impostor: &[f64], far_targets: &[f64]) -> Result<(), String> {
    let curve = roc(genuine, impostor).map_err(|e| e.to_string())?;
    let all: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
    let ts = thresholds(&all);
    if curve.points.len() != ts.len() {
        return Err(format!("roc has {} points, oracle {}", curve.points.len(), ts.len()));
    }
    for (p, &t) in curve.points.iter().zip(&ts) {
        let (ga, ia) = (accepted(genuine, t), accepted(impostor, t));
        if p.threshold != t || p.genuine_accepts != ga || p.impostor_accepts != ia {
            return Err(format!("roc point at {t}: got {p:?}, oracle ({ga}, {ia})"));
        }
        same_rate("tar", p.tar, ga, genuine.len())?;
        same_rate("far", p.far, ia, impostor.len())?;
    }
    for &target in far_targets {
        let op = tar_at_far(&curve, target).map_err(|e| e.to_string())?;
        let want = ts
            .iter()
            .copied()
            .find(|&t| ratio(accepted(impostor, t), impostor.len()) <= exact(target))
            .unwrap();
        if op.threshold != want || op.genuine_accepts != accepted(genuine, want) {
            return Err(format!("tar_at_far({target}): got {op:?}, oracle threshold {want}"));
        }
        same_rate("tar_at_far", op.tar, accepted(genuine, want), genuine.len())?;
    }
    Ok(())
}

pub fn check_accuracy(genuine: &[f64], impostor: &[f64]) -> Result<(), String> {
    let got = verification_accuracy(genuine, impostor).map_err(|e| e.to_string())?;
    let all: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
    let mut best: Option<(BigRational, f64, usize)> = None;
    for t in thresholds(&all) {
        let correct = accepted(genuine, t) + impostor.iter().filter(|&&s| s < t).count();
        let acc = ratio(correct, all.len());
        if best.as_ref().map_or(true, |b| acc > b.0) {
            best = Some((acc, t, correct));
        }
    }
    let (_, t, correct) = best.unwrap();
    if got.threshold != t || got.correct != correct || got.total != all.len() {
        return Err(format!("accuracy: got {got:?}, oracle {correct}/{} at {t}", all.len()));
    }
    same_rate("accuracy", got.accuracy, correct, all.len())
}

/// Rank of the mate when the gallery is sorted by descending score and
/// every non-mated entry tied with the mate is placed ahead of it.
fn pessimistic_rank(row: &[f64], gallery: &[u32], subject: u32) -> usize {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| {
        row[b]
            .partial_cmp(&row[a])
            .unwrap()
            .then((gallery[a] == subject).cmp(&(gallery[b] == subject)))
    });
    1 + order.iter().position(|&j| gallery[j] == subject).unwrap()
}

pub fn check_cmc(m: &ScoreMatrix) -> Result<(), String> {
    let curve = cmc_from_scores(m).map_err(|e| e.to_string())?;
    let n = m.gallery_ids.len();
    let ranks: Vec<usize> = (0..m.probe_ids.len())
        .map(|p| pessimistic_rank(m.row(p), &m.gallery_ids, m.probe_ids[p]))
        .collect();
    if curve.ranks != ranks {
        return Err(format!("cmc ranks {:?} != oracle {ranks:?}", curve.ranks));
    }
    for r in 1..=n {
        let hits = ranks.iter().filter(|&&k| k <= r).count();
        if curve.hit_counts[r - 1] != hits {
            return Err(format!("cmc rank {r}: {} hits, oracle {hits}", curve.hit_counts[r - 1]));
        }
        same_rate("cmc", curve.hits_at_rank[r - 1], hits, ranks.len())?;
    }
    Ok(())
}

pub fn check_open_set(mated: &ScoreMatrix, unmated: &ScoreMatrix) -> Result<(), String> {
    let curve = open_set_from_scores(mated, unmated).map_err(|e| e.to_string())?;
    let mut candidates = Vec::new();
    for m in [mated, unmated] {
        for p in 0..m.probe_ids.len() {
            candidates.push(m.row(p).iter().copied().fold(f64::MIN, f64::max));
        }
    }
    let ts = thresholds(&candidates);
    if curve.points.len() != ts.len() {
        return Err(format!("det has {} points, oracle {}", curve.points.len(), ts.len()));
    }
    let (nm, nu) = (mated.probe_ids.len(), unmated.probe_ids.len());
    for (pt, &t) in curve.points.iter().zip(&ts) {
        let fp = (0..nu).filter(|&p| unmated.row(p).iter().any(|&s| s >= t)).count();
        let tp = (0..nm)
            .filter(|&p| {
                let row = mated.row(p);
                let mate = mated.gallery_ids.iter().position(|&g| g == mated.probe_ids[p]).unwrap();
                row[mate] >= t && row.iter().enumerate().all(|(j, &s)| j == mate || s < row[mate])
            })
            .count();
        if pt.threshold != t || pt.false_positives != fp || pt.false_negatives != nm - tp {
            return Err(format!("det point at {t}: got {pt:?}, oracle fp {fp} tp {tp}"));
        }
        same_rate("fpir", pt.fpir, fp, nu)?;
        same_rate("fnir", pt.fnir, nm - tp, nm)?;
        if pt.tpir != 1.0 - pt.fnir {
            return Err(format!("tpir {} != 1 - fnir {}", pt.tpir, pt.fnir));
        }
    }
    Ok(())
}

/// Average precision from scores directly: a relevant item's position is
/// the count of items scoring higher, plus the tied non-relevant items,
/// plus its place among tied relevant items.
fn average_precision(row: &[f64], relevant: &[bool]) -> BigRational {
    let mut positions: Vec<usize> = Vec::new();
    for (j, &s) in row.iter().enumerate() {
        if !relevant[j] {
            continue;
        }
        let higher = row.iter().filter(|&&x| x > s).count();
        let tied_other = row.iter().zip(relevant).filter(|&(&x, &r)| x == s && !r).count();
        let tied_before = (0..j).filter(|&k| relevant[k] && row[k] == s).count();
        positions.push(higher + tied_other + tied_before + 1);
    }
    positions.sort_unstable();
    let mut sum = BigRational::from_integer(BigInt::from(0));
    for (k, &pos) in positions.iter().enumerate() {
        sum += ratio(k + 1, pos);
    }
    sum / BigInt::from(positions.len())
}

pub fn check_map(m: &ScoreMatrix) -> Result<(), String> {
    let got = retrieval_map(&rankings_from_scores(m)).map_err(|e| e.to_string())?;
    let mut total = BigRational::from_integer(BigInt::from(0));
    for p in 0..m.probe_ids.len() {
        let relevant: Vec<bool> = m.gallery_ids.iter().map(|&g| g == m.probe_ids[p]).collect();
        total += average_precision(m.row(p), &relevant);
    }
    let want = total / BigInt::from(m.probe_ids.len());
    if got.exact != want {
        return Err(format!("mAP {} != oracle {want}", got.exact));
    }
    Ok(())
}

/// One random workload for every metric. Sizes range over 1..=200 and
/// scores come from a coarse grid so ties are common.
pub struct RandomCase {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
    pub closed: ScoreMatrix,
    pub mated: ScoreMatrix,
    pub unmated: ScoreMatrix,
    pub retrieval: ScoreMatrix,
}

/// Scores on a coarse grid in [-1, 1], so ties are frequent.
pub fn grid_scores(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let levels = rng.gen_range(1..=12);
    (0..n).map(|_| rng.gen_range(0..=levels) as f64 / levels as f64 * 2.0 - 1.0).collect()
}

fn matrix(rng: &mut ChaCha8Rng, probes: Vec<u32>, gallery: Vec<u32>) -> ScoreMatrix {
    let scores = grid_scores(rng, probes.len() * gallery.len());
    ScoreMatrix::new(probes, gallery, scores).unwrap()
}

impl RandomCase {
    pub fn generate(rng: &mut ChaCha8Rng) -> Self {
        let (ng, ni) = (rng.gen_range(1..=200), rng.gen_range(1..=200));
        let genuine = grid_scores(rng, ng);
        let impostor = grid_scores(rng, ni);

        let subjects = rng.gen_range(1..=20u32);
        let gallery: Vec<u32> = (0..subjects).collect();
        let probes = (0..rng.gen_range(1..=200)).map(|_| rng.gen_range(0..subjects)).collect();
        let closed = matrix(rng, probes, gallery.clone());

        let mated_ids = (0..rng.gen_range(1..=60)).map(|_| rng.gen_range(0..subjects)).collect();
        let unmated_ids = (0..rng.gen_range(1..=60)).map(|_| subjects + rng.gen_range(0..5)).collect();
        let mated = matrix(rng, mated_ids, gallery.clone());
        let unmated = matrix(rng, unmated_ids, gallery);

        let items: Vec<u32> = (0..rng.gen_range(1..=40)).map(|_| rng.gen_range(0..subjects)).collect();
        let queries = (0..rng.gen_range(1..=30)).map(|_| items[rng.gen_range(0..items.len())]).collect();
        let retrieval = matrix(rng, queries, items);
        Self { genuine, impostor, closed, mated, unmated, retrieval }
    }

    /// Runs every oracle comparison; returns the first mismatch.
    pub fn check(&self) -> Result<(), String> {
        check_roc(&self.genuine, &self.impostor, &[0.0, 1e-3, 0.01, 0.1, 1.0 / 3.0, 0.5, 1.0])?;
        check_accuracy(&self.genuine, &self.impostor)?;
        check_cmc(&self.closed)?;
        check_open_set(&self.mated, &self.unmated)?;
        check_map(&self.retrieval)
    }
}
