mod common;

use common::oracle::{grid_scores, RandomCase};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use resdistill_core::protocols::{
    build_template, cmc_from_scores, det_auc, open_set_from_scores, retrieval_map, roc, similarity,
    tar_at_far, tpir_at_fpir, ScoreMatrix,
};

#[test]
fn metrics_match_brute_force_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..100 {
        let case = RandomCase::generate(&mut rng);
        if let Err(e) = case.check() {
            panic!("case {i}: {e}");
        }
    }
}

#[test]
fn roc_example_operating_points() {
    let c = roc(&[0.9, 0.7], &[0.8, 0.2, 0.1]).unwrap();
    let op = tar_at_far(&c, 0.0).unwrap();
    assert_eq!((op.tar, op.threshold), (0.5, 0.9));
    let op = tar_at_far(&c, 1.0).unwrap();
    assert_eq!(op.tar, 1.0);
}

#[test]
fn cmc_ties_count_against_probe() {
    let m = ScoreMatrix::new(vec![0], vec![0, 1, 2], vec![0.5, 0.5, 0.1]).unwrap();
    let c = cmc_from_scores(&m).unwrap();
    assert_eq!(c.ranks, vec![2]);
    assert_eq!(c.hits_at_rank, vec![0.0, 1.0, 1.0]);
}

#[test]
fn retrieval_map_hand_example() {
    // AP of [rel, non, rel] is (1 + 2/3) / 2 = 5/6; AP of [non, rel] is 1/2.
    let m = retrieval_map(&[vec![true, false, true], vec![false, true]]).unwrap();
    assert_eq!(m.exact, num_rational::BigRational::new(2.into(), 3.into()));
}

#[test]
fn retrieval_without_relevant_items_is_rejected() {
    assert!(retrieval_map(&[vec![false, false]]).is_err());
}

#[test]
fn unmated_probe_enrolled_in_gallery_is_rejected() {
    let g = vec![0, 1];
    let mated = ScoreMatrix::new(vec![0], g.clone(), vec![0.9, 0.1]).unwrap();
    let unmated = ScoreMatrix::new(vec![1], g, vec![0.2, 0.3]).unwrap();
    assert!(open_set_from_scores(&mated, &unmated).is_err());
}

#[test]
fn perfect_separation_gives_unit_det_auc() {
    let g = vec![0, 1];
    let mated = ScoreMatrix::new(vec![0, 1], g.clone(), vec![0.9, 0.1, 0.1, 0.9]).unwrap();
    let unmated = ScoreMatrix::new(vec![5], g, vec![0.2, 0.3]).unwrap();
    let det = open_set_from_scores(&mated, &unmated).unwrap();
    assert_eq!(det_auc(&det).unwrap(), 1.0);
    assert_eq!(tpir_at_fpir(&det, 0.0).unwrap().tpir, 1.0);
}

fn seeded(seed: u64, n: usize) -> Vec<f64> {
    grid_scores(&mut ChaCha8Rng::seed_from_u64(seed), n)
}

proptest! {
    #[test]
    fn roc_rates_are_monotone(seed in any::<u64>(), ng in 1usize..80, ni in 1usize..80) {
        let c = roc(&seeded(seed, ng), &seeded(seed ^ 1, ni)).unwrap();
        for w in c.points.windows(2) {
            prop_assert!(w[0].threshold < w[1].threshold);
            prop_assert!(w[1].far <= w[0].far && w[1].tar <= w[0].tar);
        }
        let (first, last) = (c.points.first().unwrap(), c.points.last().unwrap());
        prop_assert_eq!((first.far, first.tar), (1.0, 1.0));
        prop_assert_eq!((last.far, last.tar), (0.0, 0.0));
    }

    #[test]
    fn tar_at_far_ignores_positive_scaling(seed in any::<u64>(), n in 1usize..60, k in -4i32..4,
                                           target in 0.0f64..=1.0) {
        let (g, i) = (seeded(seed, n), seeded(seed ^ 7, n + 3));
        let c = 2f64.powi(k);
        let scale = |v: &[f64]| v.iter().map(|x| x * c).collect::<Vec<_>>();
        let a = tar_at_far(&roc(&g, &i).unwrap(), target).unwrap();
        let b = tar_at_far(&roc(&scale(&g), &scale(&i)).unwrap(), target).unwrap();
        prop_assert_eq!((a.genuine_accepts, a.impostor_accepts), (b.genuine_accepts, b.impostor_accepts));
        prop_assert_eq!(a.threshold * c, b.threshold);
    }

    #[test]
    fn tar_at_far_is_monotone_in_target(seed in any::<u64>(), n in 1usize..60, a in 0.0f64..=1.0,
                                        b in 0.0f64..=1.0) {
        let c = roc(&seeded(seed, n), &seeded(seed ^ 3, n + 5)).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (x, y) = (tar_at_far(&c, lo).unwrap(), tar_at_far(&c, hi).unwrap());
        prop_assert!(x.tar <= y.tar);
        prop_assert!(x.far <= lo);
    }

    #[test]
    fn cmc_is_monotone_and_reaches_one(seed in any::<u64>(), subjects in 1u32..12, probes in 1usize..40) {
        let ids: Vec<u32> = (0..probes as u32).map(|p| p % subjects).collect();
        let m = ScoreMatrix::new(ids, (0..subjects).collect(), seeded(seed, probes * subjects as usize)).unwrap();
        let c = cmc_from_scores(&m).unwrap();
        prop_assert!(c.hits_at_rank.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*c.hits_at_rank.last().unwrap(), 1.0);
    }

    #[test]
    fn det_fpir_falls_and_tpir_complements_fnir(seed in any::<u64>(), subjects in 1u32..8,
                                                m in 1usize..20, u in 1usize..20) {
        let g: Vec<u32> = (0..subjects).collect();
        let mated = ScoreMatrix::new((0..m as u32).map(|p| p % subjects).collect(), g.clone(),
            seeded(seed, m * subjects as usize)).unwrap();
        let unmated = ScoreMatrix::new(vec![100; u], g, seeded(seed ^ 9, u * subjects as usize)).unwrap();
        let det = open_set_from_scores(&mated, &unmated).unwrap();
        for w in det.points.windows(2) {
            prop_assert!(w[1].fpir <= w[0].fpir);
            prop_assert!(w[1].fnir >= w[0].fnir);
        }
        for p in &det.points {
            prop_assert_eq!(p.tpir, 1.0 - p.fnir);
        }
        let auc = det_auc(&det).unwrap();
        prop_assert!((0.0..=1.0).contains(&auc));
    }

    #[test]
    fn similarity_is_symmetric_and_bounded(a in prop::collection::vec(-5.0f64..5.0, 4),
                                           b in prop::collection::vec(-5.0f64..5.0, 4)) {
        prop_assume!(a.iter().any(|x| x.abs() > 1e-3) && b.iter().any(|x| x.abs() > 1e-3));
        let (ta, tb) = (build_template(0, &[a]).unwrap(), build_template(1, &[b]).unwrap());
        let s = similarity(&ta, &tb).unwrap();
        prop_assert_eq!(s, similarity(&tb, &ta).unwrap());
        prop_assert!((-1.0..=1.0).contains(&s));
    }
}
