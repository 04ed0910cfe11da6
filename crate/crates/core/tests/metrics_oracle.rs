//! Library metrics against a brute-force confusion-matrix implementation.

mod common;

use common::*;

#[test]
fn thousand_random_sets_agree_exactly() {
    let s = run_oracle(1000, 2024);
    assert_eq!(s.sets, 1000);
    assert_eq!(s.mismatches, 0);
    assert_eq!(s.recall_not_top1, 0);
}

#[test]
fn oracle_on_hand_example() {
    // truth 0 0 1 2, predictions 0 1 1 1:
    // class 0: P 1, R 1/2, F 2/3, support 2; class 1: P 1/3, R 1, F 1/2, support 1;
    // class 2: P 0, R 0, F 0, support 1
    let (p, r, f) = confusion_prf(&[0, 0, 1, 2], &[0, 1, 1, 1], 3);
    assert!((p - (2.0 * 1.0 + 1.0 / 3.0) / 4.0).abs() < 1e-15);
    assert!((r - 0.5).abs() < 1e-15);
    assert!((f - (2.0 * 2.0 / 3.0 + 0.5) / 4.0).abs() < 1e-15);
}
