mod common;

use common::{brute_force_roc, grid_sp_auc, pairwise_auc};
use endef::corpus::Label;
use endef::metrics::{
    evaluate, partial_auc, roc_auc, roc_curve, sp_auc, sp_auc_with, PredictionSet, RocIntegration,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Scores on a coarse grid so ties are common; both classes present.
fn random_set(rng: &mut ChaCha8Rng, max_n: usize) -> (Vec<f64>, Vec<Label>) {
    loop {
        let n = rng.gen_range(2..=max_n);
        let levels = rng.gen_range(2..=12);
        let labels: Vec<Label> = (0..n).map(|_| Label::from(rng.gen_bool(0.4))).collect();
        let scores = labels
            .iter()
            .map(|l| {
                let bump = if l.is_fake() { 2 } else { 0 };
                (rng.gen_range(0..levels) + bump) as f64 / (levels + 2) as f64
            })
            .collect();
        let pos = labels.iter().filter(|l| l.is_fake()).count();
        if pos > 0 && pos < n {
            return (scores, labels);
        }
    }
}

#[test]
fn roc_auc_matches_pairwise_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let (s, l) = random_set(&mut rng, 60);
        let p = PredictionSet::new(s.clone(), l.clone()).unwrap();
        let got = roc_auc(&p).unwrap();
        let want = pairwise_auc(&s, &l);
        assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
    }
}

#[test]
fn roc_points_match_thresholding() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let (s, l) = random_set(&mut rng, 30);
        let p = PredictionSet::new(s.clone(), l.clone()).unwrap();
        let got = roc_curve(&p).unwrap();
        let want = brute_force_roc(&s, &l);
        assert_eq!(got.len(), want.len());
        for (a, b) in got.iter().zip(&want) {
            assert!((a.0 - b.0).abs() < 1e-15 && (a.1 - b.1).abs() < 1e-15, "{got:?} vs {want:?}");
        }
    }
}

#[test]
fn sp_auc_matches_grid_integration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..300 {
        let (s, l) = random_set(&mut rng, 40);
        let maxfpr = [0.1, 0.25, 0.5, 1.0][i % 4];
        let p = PredictionSet::new(s.clone(), l.clone()).unwrap();
        let got = sp_auc(&p, maxfpr).unwrap();
        let want = grid_sp_auc(&s, &l, maxfpr, 2000);
        assert!((got - want).abs() <= 1e-9, "maxfpr {maxfpr}: {got} vs {want}");
    }
}

#[test]
fn full_range_sp_auc_is_auc() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let (s, l) = random_set(&mut rng, 40);
        let p = PredictionSet::new(s, l).unwrap();
        assert!((sp_auc(&p, 1.0).unwrap() - roc_auc(&p).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn perfect_and_diagonal_are_exact() {
    let labels = vec![Label::Real, Label::Fake, Label::Real, Label::Fake, Label::Real];
    let perfect = PredictionSet::new(vec![0.1, 0.9, 0.2, 0.8, 0.3], labels.clone()).unwrap();
    assert_eq!(sp_auc(&perfect, 0.1).unwrap(), 1.0);
    let flat = PredictionSet::new(vec![0.5; 5], labels).unwrap();
    assert_eq!(sp_auc(&flat, 0.1).unwrap(), 0.5);
    assert_eq!(roc_auc(&flat).unwrap(), 0.5);
}

#[test]
fn step_and_trapezoid_agree_without_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let n = rng.gen_range(4..40);
        let labels: Vec<Label> = (0..n).map(|i| Label::from(i % 3 == 0)).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let p = PredictionSet::new(scores, labels).unwrap();
        // With distinct scores the ROC has only axis-parallel segments, so the
        // two rules differ only in the cut cell.
        let trap = partial_auc(&p, 1.0, RocIntegration::Trapezoidal).unwrap();
        let step = partial_auc(&p, 1.0, RocIntegration::Step).unwrap();
        assert!((trap - step).abs() < 1e-12);
        let _ = sp_auc_with(&p, 0.1, RocIntegration::Step).unwrap();
    }
}

proptest! {
    #[test]
    fn metrics_stay_in_range(
        pairs in prop::collection::vec((0u8..20, any::<bool>()), 2..80)
    ) {
        let scores: Vec<f64> = pairs.iter().map(|(s, _)| *s as f64 / 19.0).collect();
        let labels: Vec<Label> = pairs.iter().map(|(_, l)| Label::from(*l)).collect();
        prop_assume!(labels.iter().any(|l| l.is_fake()) && labels.iter().any(|l| !l.is_fake()));
        let p = PredictionSet::new(scores, labels).unwrap();
        let r = evaluate(&p).unwrap();
        for v in r.values() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(r.macf1 <= r.f1_fake.max(r.f1_real) + 1e-15);
        // Flipping labels reflects the ROC: AUC -> 1 - AUC.
        let auc_flipped = roc_auc(&p.inverted_labels()).unwrap();
        prop_assert!((r.auc + auc_flipped - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auc_invariant_under_monotone_transform(
        pairs in prop::collection::vec((0u8..20, any::<bool>()), 2..60)
    ) {
        let labels: Vec<Label> = pairs.iter().map(|(_, l)| Label::from(*l)).collect();
        prop_assume!(labels.iter().any(|l| l.is_fake()) && labels.iter().any(|l| !l.is_fake()));
        let a: Vec<f64> = pairs.iter().map(|(s, _)| *s as f64).collect();
        let b: Vec<f64> = a.iter().map(|x| (x * 0.3).exp() - 4.0).collect();
        let pa = PredictionSet::new(a, labels.clone()).unwrap();
        let pb = PredictionSet::new(b, labels).unwrap();
        prop_assert_eq!(roc_auc(&pa).unwrap(), roc_auc(&pb).unwrap());
        prop_assert!((sp_auc(&pa, 0.1).unwrap() - sp_auc(&pb, 0.1).unwrap()).abs() < 1e-12);
    }
}
