mod common;

use cadastre_core::assembler::{assemble, reduce_labels, ExperimentPlan};
use cadastre_core::Error;
use common::{assembler_trial, augmented_fraction, default_split_sizes, manual_pool, synthetic_pool};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn five_hundred_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut assembled = 0;
    for i in 0..500 {
        match assembler_trial(&mut rng) {
            Ok(built) => assembled += built as usize,
            Err(e) => panic!("instance {i}: {e}"),
        }
    }
    assert!(assembled >= 250, "only {assembled} instances assembled");
}

#[test]
fn default_targets() {
    assert_eq!(default_split_sizes("mixed-stucco"), vec![(596, 149); 3]);
    assert_eq!(default_split_sizes("synthetic"), vec![(596, 149); 3]);
    assert_eq!(default_split_sizes("mixed-siding"), vec![(248, 62); 3]);
}

#[test]
fn augmented_top_up_fractions() {
    let stucco = augmented_fraction("stucco", &[("null", 125), ("other", 125), ("stucco", 91)]);
    assert!((stucco - 0.27).abs() < 1e-12, "{stucco}");
    let siding = augmented_fraction("siding", &[("null", 125), ("other", 125), ("siding", 25)]);
    assert!((siding - 0.80).abs() < 1e-12, "{siding}");
}

#[test]
fn shortfall_names_class_and_deficit() {
    let plan = ExperimentPlan::from_name("mixed-siding", 1).unwrap();
    let manual = manual_pool(&[("null", 70), ("other", 70), ("siding", 70)]);
    let synthetic = synthetic_pool(&[("null", 300), ("other", 300), ("siding", 200)]);
    match assemble(&plan, &manual, &synthetic) {
        Err(Error::Insufficient(msg)) => assert!(msg.contains("siding") && msg.contains("short 48"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn pending_synthetic_is_refused() {
    let plan = ExperimentPlan::from_name("augmented-stucco", 1).unwrap();
    let manual = manual_pool(&[("null", 5), ("other", 5), ("stucco", 3)]);
    let mut synthetic = synthetic_pool(&[("stucco", 5)]);
    synthetic[0].review_status = cadastre_core::ReviewStatus::Pending;
    assert!(assemble(&plan, &manual, &synthetic).is_err());
}

#[test]
fn reduction_folds_everything_else_into_other() {
    let urc = manual_pool(&[("brick", 2), ("stucco", 1), ("null", 1), ("wood", 1)]);
    let reduced = reduce_labels(&urc, "stucco").unwrap();
    let labels: Vec<&str> = reduced.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["other", "other", "stucco", "null", "other"]);
    assert!(reduce_labels(&manual_pool(&[("nope", 1)]), "stucco").is_err());
}
