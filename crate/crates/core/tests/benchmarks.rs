mod common;

use common::random_gray;
use frontal::descriptors::{describe, DescriptorConfig, Variant};
use frontal::learners::ImageFeatures;
use frontal::pipeline::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_cfg() -> DescriptorConfig {
    DescriptorConfig {
        blocks_x: 2,
        blocks_y: 2,
        ..DescriptorConfig::default()
    }
}

fn identities(n: usize, per: usize) -> Vec<String> {
    (0..n * per).map(|i| format!("p{:03}", i / per)).collect()
}

#[test]
fn identical_same_pairs_are_separable() {
    let ids = identities(40, 3);
    // every item of an identity is the same image
    let features: Vec<ImageFeatures> = (0..ids.len())
        .map(|i| ImageFeatures::compute(&random_gray((i / 3) as u64, 32, 32), &small_cfg()).unwrap())
        .collect();
    let split = verification_protocol(&ids, 10, 10, 3).unwrap();
    let report = bench_verify(&features, &ids, &split, &VerifyConfig::default()).unwrap();
    assert_eq!(report.fold_accuracy.len(), 10);
    assert_eq!(report.mean, 1.0, "{:?}", report.fold_accuracy);
    assert!((report.auc - 1.0).abs() < 1e-12);
}

#[test]
fn shuffled_labels_give_chance_accuracy() {
    let ids = identities(60, 3);
    let features: Vec<ImageFeatures> = (0..ids.len())
        .map(|i| ImageFeatures::compute(&random_gray(1000 + i as u64, 32, 32), &small_cfg()).unwrap())
        .collect();
    let mut split = verification_protocol(&ids, 10, 18, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for fold in &mut split.folds {
        let mut flags: Vec<bool> = fold.iter().map(|p| p.same).collect();
        flags.shuffle(&mut rng);
        for (p, f) in fold.iter_mut().zip(flags) {
            p.same = f;
        }
    }
    let report = bench_verify(&features, &ids, &split, &VerifyConfig::default()).unwrap();
    assert!((report.mean - 0.5).abs() <= 0.1, "{}", report.mean);
}

#[test]
fn leaking_protocol_is_refused_before_training() {
    let ids = identities(12, 3);
    let features: Vec<ImageFeatures> = (0..ids.len())
        .map(|i| ImageFeatures::compute(&random_gray(i as u64, 24, 24), &small_cfg()).unwrap())
        .collect();
    let mut split = verification_protocol(&ids, 3, 3, 1).unwrap();
    // copy a pair of fold 0 over a pair with the same label in fold 1
    let p = split.folds[0][0];
    let slot = split.folds[1].iter().position(|q| q.same == p.same).unwrap();
    split.folds[1][slot] = p;
    let err = bench_verify(&features, &ids, &split, &VerifyConfig::default()).unwrap_err();
    assert!(matches!(err, PipelineError::Leakage { .. }), "{err}");
}

#[test]
fn unbalanced_or_short_protocols_are_refused() {
    let ids = identities(12, 3);
    assert!(matches!(verification_protocol(&ids, 2, 3, 1).map(|s| s.validate(36)), Ok(Err(PipelineError::Protocol(_)))));
    assert!(matches!(verification_protocol(&ids, 7, 3, 1), Err(PipelineError::Protocol(_))));
    let mut split = verification_protocol(&ids, 3, 3, 1).unwrap();
    split.folds[2].pop();
    assert!(split.validate(36).is_err());
}

#[test]
fn shuffled_gender_labels_give_chance_accuracy() {
    let n = 200;
    let subjects: Vec<String> = (0..n).map(|i| format!("s{}", i / 2)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    let features: Vec<Vec<f64>> = (0..n)
        .map(|i| describe(&random_gray(500 + i as u64, 32, 32), Variant::Lbp, &small_cfg()).unwrap().values)
        .collect();
    let split = GenderSplit::subject_exclusive(&subjects, 5, 2);
    let report = bench_gender(&features, &labels, &subjects, &split, &GenderConfig::default()).unwrap();
    assert!((report.mean - 0.5).abs() <= 0.1, "{}", report.mean);
}

#[test]
fn single_class_training_fold_is_an_error() {
    let subjects: Vec<String> = (0..30).map(|i| format!("s{i}")).collect();
    let labels = vec![true; 30];
    let features: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, 1.0]).collect();
    let split = GenderSplit::subject_exclusive(&subjects, 3, 0);
    let err = bench_gender(&features, &labels, &subjects, &split, &GenderConfig::default()).unwrap_err();
    assert!(matches!(err, PipelineError::SingleClassFold(_)));
}
