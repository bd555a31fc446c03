//! Hand-derived gradients against central finite differences.

mod common;

use common::{actor_gradient_gap, classifier_gradient_gap, critic_gradient_gap};

const TOL: f64 = 1e-4;

#[test]
fn classifier_gradient() {
    for seed in 1..=3 {
        let gap = classifier_gradient_gap(seed);
        assert!(gap < TOL, "seed {seed}: {gap:e}");
    }
}

#[test]
fn critic_gradient() {
    for seed in 1..=3 {
        let gap = critic_gradient_gap(seed);
        assert!(gap < TOL, "seed {seed}: {gap:e}");
    }
}

#[test]
fn actor_gradient_through_critic() {
    for seed in 1..=3 {
        let gap = actor_gradient_gap(seed);
        assert!(gap < TOL, "seed {seed}: {gap:e}");
    }
}
