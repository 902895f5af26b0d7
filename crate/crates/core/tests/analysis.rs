//! Calibration, agreement and diversity statistics.

mod support;

use mcls_core::analysis::*;
use mcls_core::finetune::PredictionRecord;
use mcls_core::numkernel::Tensor;
use mcls_core::rng::{seeded, stream};
use proptest::prelude::*;
use support::chernoff_oracle;
use support::criteria::{chernoff_is_monotone, random_overlap_mean, random_records};

fn record(id: u64, gold: f64, probs: Vec<f64>) -> PredictionRecord {
    PredictionRecord { id, gold, probs, cls_probs: vec![], uncertainty: 0.0, cls_hidden: None }
}

#[test]
fn identical_rankings_overlap_fully() {
    let r: Vec<u64> = (0..1000).rev().collect();
    let o = top20_overlap(&r, &r).unwrap();
    assert_eq!((o.count, o.m, o.ratio), (200, 200, 1.0));
}

#[test]
fn random_rankings_overlap_at_one_fifth() {
    let mean = random_overlap_mean(1000, 100).unwrap();
    assert!((mean - 0.2).abs() <= 0.02, "{mean}");
}

#[test]
fn chernoff_at_expectation_and_monotone() {
    assert!(chernoff_is_monotone(1000).unwrap());
    assert_eq!(chernoff_p(&[0], 1000).unwrap(), 1.0);
}

#[test]
fn chernoff_matches_high_precision_values() {
    // exp(μ(δ − (1+δ)ln(1+δ))) evaluated with 40-digit arithmetic
    let p = chernoff_p(&[200], 1000).unwrap();
    assert!((p / 4.933058177706023e-71 - 1.0).abs() < 1e-9, "{p:e}");
    let p = chernoff_p(&[40, 45, 50, 45, 50], 1000).unwrap();
    assert!((p - 0.11703915450419412).abs() < 1e-12);
    assert!((chernoff_oracle(40.0, 4.0) / 4.933058177706023e-71 - 1.0).abs() < 1e-9);
}

#[test]
fn overlap_report_pools_trials() {
    let a: Vec<u64> = (0..50).collect();
    let b: Vec<u64> = (0..50).rev().collect();
    let r = overlap_report("x", "y", &[(a.clone(), a.clone()), (a, b)]).unwrap();
    assert_eq!(r.overlaps, vec![10, 0]);
    assert_eq!(r.ratio, 0.5);
    assert!(top20_overlap(&[1, 2, 3], &[1, 2, 3]).is_err());
}

#[test]
fn ensemble_variance_three_files() {
    let files: Vec<Vec<PredictionRecord>> = [[0.2, 0.8], [0.5, 0.5], [0.8, 0.2]]
        .iter()
        .map(|p| vec![record(7, 0.0, p.to_vec()), record(9, 1.0, vec![0.5, 0.5])])
        .collect();
    let v = ensemble_variance(&files).unwrap();
    // each class: values 0.2, 0.5, 0.8 around 0.5 → (0.09 + 0 + 0.09)/3
    assert!((v[0].1 - 0.06).abs() < 1e-15);
    assert_eq!(v[1], (9, 0.0));
    assert_eq!(uncertainty_rank(&files, UncertaintyMethod::EnsembleVar).unwrap(), vec![7, 9]);
}

#[test]
fn least_confidence_ranks_ties_by_id() {
    let recs = vec![record(3, 0.0, vec![0.6, 0.4]), record(1, 0.0, vec![0.6, 0.4]), record(2, 0.0, vec![0.9, 0.1])];
    assert_eq!(uncertainty_rank(&[recs], UncertaintyMethod::LeastConfidence).unwrap(), vec![1, 3, 2]);
}

#[test]
fn uniform_confidence_ece_is_zero() {
    let recs: Vec<_> = (0..100).map(|i| record(i, if i < 90 { 0.0 } else { 1.0 }, vec![0.9, 0.1])).collect();
    assert!(ece(&recs).unwrap().0.abs() < 1e-15);
}

#[test]
fn neighbors_on_five_points() {
    let pts = [[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [-1.0, 0.0], [0.7, 0.7]];
    let recs: Vec<_> = pts
        .iter()
        .enumerate()
        .map(|(i, p)| PredictionRecord { cls_hidden: Some(vec![vec![1.0, 1.0], p.to_vec()]), ..record(i as u64, 0.0, vec![1.0]) })
        .collect();
    let nn = nearest_neighbors(&recs, 0, 1, 3).unwrap();
    let ids: Vec<u64> = nn.iter().map(|x| x.0).collect();
    assert_eq!(ids, vec![1, 4, 2]);
    assert!((nn[1].1 - 0.7 / (0.98f64).sqrt()).abs() < 1e-12);
    assert_eq!(nearest_neighbors(&recs, 0, 0, 10).unwrap().len(), 4);
    assert!(nearest_neighbors(&recs, 0, 2, 1).is_err());
}

#[test]
fn independent_facets_are_uncorrelated() {
    let mut rng = stream(0, "test/diversity");
    let c1 = Tensor::randn(&[40, 3, 16], 1.0, &mut rng);
    let c2 = Tensor::randn(&[40, 3, 16], 1.0, &mut rng);
    for (_, _, r) in diversity_matrix(&c1, &c2).unwrap() {
        assert!(r.abs() < 0.15, "{r}");
    }
}

#[test]
fn collapsed_facets_correlate_perfectly() {
    let mut rng = seeded(1);
    let base = Tensor::randn(&[6, 1, 4], 1.0, &mut rng);
    let stack = |t: &Tensor| {
        let d: Vec<f64> = (0..6).flat_map(|i| {
            let r = t.data()[i * 4..][..4].to_vec();
            [r.clone(), r.iter().map(|x| 2.0 * x).collect::<Vec<_>>()].concat()
        }).collect();
        Tensor::new(vec![6, 2, 4], d).unwrap()
    };
    let c = stack(&base);
    assert!((diversity_corr(&c, &c, 0, 1).unwrap() - 1.0).abs() < 1e-12);
}

fn parts() -> impl Strategy<Value = (Tensor, Tensor)> {
    (prop::collection::vec(-2.0f64..2.0, 5 * 3 * 4), prop::collection::vec(-2.0f64..2.0, 5 * 3 * 4)).prop_map(|(a, b)| {
        (Tensor::new(vec![5, 3, 4], a).unwrap(), Tensor::new(vec![5, 3, 4], b).unwrap())
    })
}

proptest! {
    #[test]
    fn ece_ignores_record_order(seed in 0u64..10_000) {
        let mut rng = seeded(seed);
        let mut recs = random_records(&mut rng, 37, 3);
        let before = ece(&recs).unwrap().0;
        recs.reverse();
        recs.rotate_left(11);
        for (i, r) in recs.iter_mut().enumerate() {
            r.id = 1000 - i as u64;
        }
        prop_assert!((ece(&recs).unwrap().0 - before).abs() < 1e-12);
    }

    #[test]
    fn overlap_is_symmetric(seed in 0u64..10_000, n in 5usize..200) {
        use rand::seq::SliceRandom;
        let mut rng = seeded(seed);
        let mut a: Vec<u64> = (0..n as u64).collect();
        let mut b = a.clone();
        a.shuffle(&mut rng);
        b.shuffle(&mut rng);
        prop_assert_eq!(top20_overlap(&a, &b).unwrap(), top20_overlap(&b, &a).unwrap());
    }

    #[test]
    fn chernoff_never_increases(n in 10usize..2000, a in 0usize..500, extra in 0usize..500) {
        let lo = chernoff_p(&[a], n).unwrap();
        let hi = chernoff_p(&[a + extra], n).unwrap();
        prop_assert!(hi <= lo);
        prop_assert!((0.0..=1.0).contains(&hi));
    }

    #[test]
    fn diversity_is_symmetric((c1, c2) in parts()) {
        if let (Ok(x), Ok(y)) = (diversity_corr(&c1, &c2, 0, 2), diversity_corr(&c1, &c2, 2, 0)) {
            prop_assert!((x - y).abs() < 1e-12);
            prop_assert!(x.abs() <= 1.0 + 1e-12);
        }
    }
}
