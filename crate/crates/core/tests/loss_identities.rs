mod common;

use common::identities;

#[test]
fn uniform_predictions_cost_ln5_per_label() {
    assert!(identities::uniform_expert_gap() < 1e-9);
}

#[test]
fn perfect_predictions_cost_nothing() {
    let (l1, l2) = identities::perfect_prediction_losses();
    assert_eq!(l1, 0.0);
    assert_eq!(l2, 0.0);
}

#[test]
fn total_is_weighted_sum_of_components() {
    for seed in 0..4 {
        assert!(identities::breakdown_gap(seed) < 1e-12, "seed {seed}");
    }
}

#[test]
fn orthogonal_pair_costs_two_ln2() {
    assert!(identities::echo_orthogonal_gap() < 1e-9);
}
