//! Training loop (noisy actions, replay, one update per slot once the buffer
//! holds more than a mini-batch) and frozen-policy testing.

use sha2::{Digest, Sha256};

use super::agent::{Agent, AgentSettings};
use super::noise::OuNoise;
use super::replay::{ReplayBuffer, Transition};
use super::{binarize, build_state, reward, selected_ids, Action, StateScales};
use crate::afl::{SlotOutcome, SlotSettings};
use crate::error::Result;
use crate::model::Evaluation;
use crate::rng::{stream, tag, SimRng};
use crate::scenario::{Episode, Scenario, Stage};

/// Everything recorded about one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotLog {
    pub stage: Stage,
    pub episode: usize,
    pub slot: usize,
    pub lambdas: Vec<f64>,
    pub mask: Vec<bool>,
    pub reward: f64,
    pub outcome: SlotOutcome,
    pub eval: Evaluation,
}

#[derive(Debug, Clone)]
pub struct TrainingReport {
    pub agent: Agent,
    /// Sum of slot rewards per episode.
    pub episode_rewards: Vec<f64>,
    pub slots: Vec<SlotLog>,
    /// Digest of the exploration and replay stream positions at the end.
    pub rng_digest: String,
}

#[derive(Debug, Clone)]
pub struct PolicyTrace {
    pub episode_rewards: Vec<f64>,
    pub slots: Vec<SlotLog>,
    /// How many slots each vehicle was admitted in.
    pub admissions: Vec<usize>,
}

impl PolicyTrace {
    pub fn admission_rates(&self) -> Vec<f64> {
        let n = self.slots.len().max(1) as f64;
        self.admissions.iter().map(|&a| a as f64 / n).collect()
    }
}

fn rng_digest(rngs: &[&SimRng]) -> String {
    let mut h = Sha256::new();
    for r in rngs {
        h.update(r.get_seed());
        h.update(r.get_word_pos().to_le_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

struct StepResult {
    log: SlotLog,
    observation: Vec<f64>,
    next_observation: Vec<f64>,
    action: Action,
}

/// Observe, act (optionally with exploration noise), run the slot and score it.
fn policy_step(
    ep: &mut Episode<'_>,
    agent: &Agent,
    prev: &Action,
    noise: Option<&mut OuNoise>,
    settings: &SlotSettings,
    scales: &StateScales,
    (w1, w2, floor): (f64, f64, f64),
) -> Result<StepResult> {
    let k = prev.len();
    let observation = build_state(&ep.profiles(), prev)?.observation(scales);
    let mut raw = agent.act(&observation)?;
    if let Some(noise) = noise {
        for (a, n) in raw.iter_mut().zip(noise.sample()) {
            *a += n;
        }
    }
    let action = Action::clipped(&raw, floor);
    let mask = binarize(&action);
    let (episode, slot) = (ep.episode(), ep.slot());
    let outcome = ep.step(&selected_ids(&mask), settings)?;
    let eval = ep.evaluate()?;

    let mut delays = vec![0.0; k];
    let mut uploaded = vec![false; k];
    for &(id, d) in &outcome.delays {
        delays[id] = d;
        uploaded[id] = true;
    }
    let r = reward(
        &action.lambdas,
        &uploaded,
        outcome.avg_loss,
        &delays,
        w1,
        w2,
    )?;
    let next_observation = build_state(&ep.profiles(), &action)?.observation(scales);
    Ok(StepResult {
        log: SlotLog {
            stage: ep.stage(),
            episode,
            slot,
            lambdas: action.lambdas.clone(),
            mask,
            reward: r,
            outcome,
            eval,
        },
        observation,
        next_observation,
        action,
    })
}

/// Trains a fresh agent for the configured number of episodes. Attacks and
/// the threshold filter are left out of this stage.
pub fn train(scenario: &Scenario, settings: &SlotSettings) -> Result<TrainingReport> {
    let cfg = &scenario.cfg;
    let seed = scenario.seed();
    let k = scenario.num_vehicles();
    let settings = SlotSettings {
        defense: false,
        ..*settings
    };
    let scales = StateScales::from_config(cfg);
    let mut agent = Agent::new(AgentSettings::from_config(cfg), seed)?;
    let mut noise = OuNoise::new(
        k,
        cfg.ou_theta,
        cfg.ou_sigma(),
        stream(seed, &[tag::EXPLORATION]),
    )?;
    let mut replay = ReplayBuffer::new(cfg.replay_capacity)?;
    let mut replay_rng = stream(seed, &[tag::REPLAY]);
    let weights = (cfg.w1, cfg.w2, cfg.lambda_floor);

    let mut episode_rewards = Vec::with_capacity(cfg.train_episodes);
    let mut slots = Vec::with_capacity(cfg.train_episodes * cfg.slots_per_episode);
    for e in 0..cfg.train_episodes {
        let mut ep = scenario.episode(Stage::Train, e, false)?;
        noise.reset();
        let mut prev = Action::initial(k);
        let mut total = 0.0;
        for _ in 0..cfg.slots_per_episode {
            let step = policy_step(
                &mut ep,
                &agent,
                &prev,
                Some(&mut noise),
                &settings,
                &scales,
                weights,
            )?;
            total += step.log.reward;
            replay.push(Transition {
                state: step.observation,
                action: step.action.lambdas.clone(),
                reward: step.log.reward,
                next_state: step.next_observation,
            });
            if replay.len() > cfg.minibatch_size {
                let batch = replay.sample(cfg.minibatch_size, &mut replay_rng)?;
                agent.update(&batch)?;
            }
            prev = step.action;
            slots.push(step.log);
        }
        episode_rewards.push(total);
    }
    let rng_digest = rng_digest(&[noise.rng(), &replay_rng]);
    Ok(TrainingReport {
        agent,
        episode_rewards,
        slots,
        rng_digest,
    })
}

/// Runs the frozen actor without noise for `episodes` test episodes.
pub fn test_policy(
    agent: &Agent,
    scenario: &Scenario,
    settings: &SlotSettings,
    episodes: usize,
) -> Result<PolicyTrace> {
    let cfg = &scenario.cfg;
    let k = scenario.num_vehicles();
    let scales = StateScales::from_config(cfg);
    let weights = (cfg.w1, cfg.w2, cfg.lambda_floor);
    let mut trace = PolicyTrace {
        episode_rewards: Vec::with_capacity(episodes),
        slots: Vec::with_capacity(episodes * cfg.slots_per_episode),
        admissions: vec![0; k],
    };
    for e in 0..episodes {
        let mut ep = scenario.episode(Stage::Test, e, true)?;
        let mut prev = Action::initial(k);
        let mut total = 0.0;
        for _ in 0..cfg.slots_per_episode {
            let step = policy_step(&mut ep, agent, &prev, None, settings, &scales, weights)?;
            total += step.log.reward;
            for (count, &m) in trace.admissions.iter_mut().zip(&step.log.mask) {
                *count += usize::from(m);
            }
            prev = step.action;
            trace.slots.push(step.log);
        }
        trace.episode_rewards.push(total);
    }
    Ok(trace)
}
