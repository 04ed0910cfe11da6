//! Cross-validation protocol at full dataset scale.

mod common;

use artzoom::dataset::DEFAULT_SPLIT_SEED;
use artzoom::kfold_split;
use common::*;

#[test]
fn ten_folds_over_full_dataset() {
    let (mut sizes, partition, reproducible) = protocol_check();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    assert_eq!(sizes, [2408, 2408, 2408, 2407, 2407, 2407, 2407, 2407, 2407, 2407]);
    assert!(partition);
    assert!(reproducible);
}

#[test]
fn other_seed_changes_assignment() {
    let m = full_manifest();
    let a = kfold_split(&m, 10, DEFAULT_SPLIT_SEED).unwrap();
    let b = kfold_split(&m, 10, DEFAULT_SPLIT_SEED + 1).unwrap();
    assert_ne!(a.fold_of, b.fold_of);
}
