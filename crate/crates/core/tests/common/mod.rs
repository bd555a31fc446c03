//! Shared helpers for the integration suites: arbitrary-precision oracles,
//! finite-difference gradient checks, AR trace statistics and small configs.

#![allow(dead_code)]

pub mod oracle;

use ddafl::afl::SlotOutcome;
use ddafl::channel::{evolve_channel, ChannelState};
use ddafl::config::SimConfig;
use ddafl::ddpg::{actor_objective_and_gradient, critic_loss_and_gradient};
use ddafl::model::{
    cross_entropy_loss, loss_and_gradient, LabeledBatch, ModelParams, OutputActivation,
};
use ddafl::rng::stream;
use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;

/// Runs with few episodes and small nets; every code path is exercised.
pub fn tiny_config() -> SimConfig {
    SimConfig {
        train_episodes: 3,
        test_episodes: 2,
        slots_per_episode: 4,
        minibatch_size: 4,
        replay_capacity: 200,
        actor_hidden: vec![16],
        critic_hidden: vec![16],
        shard_size: 60,
        rsu_shard_size: 60,
        test_set_size: 100,
        ..SimConfig::default()
    }
}

/// Largest relative error between an analytic and a numeric gradient.
/// Entries where both are below `floor` are compared against `floor`, since
/// central differences carry absolute noise of order `eps |f| / h`.
pub fn max_rel_gap(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Central differences of `f` at every coordinate of `params`.
pub fn numeric_gradient(
    params: &ModelParams,
    h: f64,
    mut f: impl FnMut(&ModelParams) -> f64,
) -> Vec<f64> {
    let arch = params.architecture();
    let act = params.output_activation();
    let flat = params.flatten();
    (0..flat.len())
        .map(|i| {
            let mut plus = flat.clone();
            let mut minus = flat.clone();
            plus[i] += h;
            minus[i] -= h;
            let p = ModelParams::from_flat(&arch, act, &plus).unwrap();
            let m = ModelParams::from_flat(&arch, act, &minus).unwrap();
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_FLOOR: f64 = 1e-6;

fn uniform_rows(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = stream(seed, &[rows as u64, cols as u64]);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(0.0..1.0))
}

/// Classifier 8-4-10 against central differences of the mean cross-entropy.
pub fn classifier_gradient_gap(seed: u64) -> f64 {
    let params = ModelParams::init(&[8, 4, 10], OutputActivation::Softmax, seed).unwrap();
    let mut rng = stream(seed, &[99]);
    let labels: Vec<usize> = (0..12).map(|_| rng.random_range(0..10)).collect();
    let batch = LabeledBatch::new(uniform_rows(12, 8, seed), labels).unwrap();
    let (_, grad) = loss_and_gradient(&params, &batch).unwrap();
    let numeric = numeric_gradient(&params, FD_STEP, |p| cross_entropy_loss(p, &batch).unwrap());
    max_rel_gap(&grad.flatten(), &numeric, FD_FLOOR)
}

/// Critic 4K-8-1 (K = 3) against central differences of the TD loss.
pub fn critic_gradient_gap(seed: u64) -> f64 {
    let k = 3;
    let critic = ModelParams::init(&[5 * k, 8, 1], OutputActivation::Linear, seed).unwrap();
    let states = uniform_rows(10, 4 * k, seed);
    let actions = uniform_rows(10, k, seed + 1);
    let mut rng = stream(seed, &[7]);
    let targets: Vec<f64> = (0..10).map(|_| rng.random_range(-3.0..0.0)).collect();
    let (_, grad) =
        critic_loss_and_gradient(&critic, states.view(), actions.view(), &targets).unwrap();
    let numeric = numeric_gradient(&critic, FD_STEP, |c| {
        critic_loss_and_gradient(c, states.view(), actions.view(), &targets)
            .unwrap()
            .0
    });
    max_rel_gap(&grad.flatten(), &numeric, FD_FLOOR)
}

/// Actor 4K-8-K chained through a fixed critic, against central differences
/// of the sampled objective.
pub fn actor_gradient_gap(seed: u64) -> f64 {
    let k = 3;
    let actor = ModelParams::init(&[4 * k, 8, k], OutputActivation::Sigmoid, seed).unwrap();
    let critic = ModelParams::init(&[5 * k, 8, 1], OutputActivation::Linear, seed + 1).unwrap();
    let states = uniform_rows(10, 4 * k, seed);
    let (_, grad) = actor_objective_and_gradient(&actor, &critic, states.view()).unwrap();
    let numeric = numeric_gradient(&actor, FD_STEP, |a| {
        actor_objective_and_gradient(a, &critic, states.view())
            .unwrap()
            .0
    });
    max_rel_gap(&grad.flatten(), &numeric, FD_FLOOR)
}

/// Normalized lag-one autocorrelation and second moment of an AR(1) fading
/// trace of `steps` steps at correlation `rho`.
pub fn ar_trace_stats(rho: f64, steps: usize, seed: u64) -> (f64, f64) {
    let mut rng = stream(seed, &[steps as u64]);
    let mut state =
        ChannelState::new(ddafl::channel::complex_gaussian(&mut rng), rho, 0.0).unwrap();
    let mut trace = Vec::with_capacity(steps);
    for _ in 0..steps {
        state = evolve_channel(&state, ddafl::channel::complex_gaussian(&mut rng));
        trace.push(state.gain);
    }
    complex_stats(&trace)
}

/// `Re E[h_t conj(h_{t-1})] / E|h|^2` and `E|h|^2`.
fn complex_stats(trace: &[Complex64]) -> (f64, f64) {
    let n = trace.len() as f64;
    let power = trace.iter().map(|h| h.norm_sqr()).sum::<f64>() / n;
    let lag: f64 = trace
        .windows(2)
        .map(|w| (w[1] * w[0].conj()).re)
        .sum::<f64>()
        / (n - 1.0);
    (lag / power, power)
}

/// Accepted uploads whose loss exceeds `beta_r` times the trusted loss.
pub fn filter_breaches(outcome: &SlotOutcome, beta_r: f64) -> usize {
    let Some(rsu) = outcome.rsu_loss else {
        return 0;
    };
    outcome
        .records
        .iter()
        .filter(|r| r.accepted && r.local_loss > beta_r * rsu)
        .count()
}

/// Filter soundness over every slot of a trace: no accepted upload exceeds
/// the threshold, recomputed independently of the engine's own counter.
pub fn assert_filter_sound(slots: &[ddafl::ddpg::SlotLog], beta_r: f64) {
    for s in slots {
        assert_eq!(
            filter_breaches(&s.outcome, beta_r),
            0,
            "episode {} slot {}",
            s.episode,
            s.slot
        );
        assert_eq!(
            s.outcome.filter_violations, 0,
            "episode {} slot {}",
            s.episode, s.slot
        );
    }
}
