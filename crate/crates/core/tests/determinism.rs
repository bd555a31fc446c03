//! Re-running a cell reproduces its metrics byte for byte, and schemes run
//! under one seed see the same world.

mod common;

use common::{assert_filter_sound, tiny_config};
use ddafl::config::SimConfig;
use ddafl::data::AttackKind;
use ddafl::experiment::{run_experiment, Scheme};
use ddafl::metrics::{parse_csv, to_csv};

fn csv_of(cfg: &SimConfig, scheme: Scheme) -> String {
    let result = run_experiment(cfg, scheme).unwrap();
    assert_filter_sound(&result.test.slots, cfg.beta_r);
    to_csv(&result.rows)
}

#[test]
fn every_scheme_reruns_byte_identically() {
    let cfg = SimConfig {
        attack: AttackKind::ClassFlip,
        ..tiny_config()
    };
    for scheme in Scheme::ALL {
        let a = csv_of(&cfg, scheme);
        let b = csv_of(&cfg, scheme);
        assert_eq!(a.as_bytes(), b.as_bytes(), "{scheme}");
        assert_eq!(to_csv(&parse_csv(&a).unwrap()), a, "{scheme}");
    }
}

#[test]
fn seed_changes_the_run() {
    let cfg = tiny_config();
    let other = SimConfig {
        seed: 2,
        ..cfg.clone()
    };
    assert_ne!(csv_of(&cfg, Scheme::Ddafl), csv_of(&other, Scheme::Ddafl));
}

#[test]
fn baselines_share_the_world_under_one_seed() {
    let cfg = SimConfig {
        bad_vehicle: Some(2),
        ..tiny_config()
    };
    let plain = run_experiment(&cfg, Scheme::PlainAfl).unwrap();
    let sync = run_experiment(&cfg, Scheme::SyncFl).unwrap();
    assert_eq!(plain.test.slots.len(), sync.test.slots.len());
    for (p, s) in plain.test.slots.iter().zip(&sync.test.slots) {
        assert_eq!(p.outcome.delays, s.outcome.delays);
    }
}

#[test]
fn agent_schemes_share_training_worlds() {
    // Ablations change the weights, never the channels or compute draws, so
    // the first slot of training (same untrained actor) has equal delays.
    let cfg = tiny_config();
    let full = run_experiment(&cfg, Scheme::Ddafl).unwrap();
    let no_ct = run_experiment(&cfg, Scheme::DdaflNoCt).unwrap();
    let (a, b) = (
        &full.training.unwrap().slots[0],
        &no_ct.training.unwrap().slots[0],
    );
    assert_eq!(a.mask, b.mask);
    assert_eq!(a.outcome.delays, b.outcome.delays);
}
