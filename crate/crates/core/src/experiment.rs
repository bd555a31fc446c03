//! Experiment orchestration: schemes, paired runs, attack sweeps.

use std::fmt;
use std::str::FromStr;

use crate::afl::{Aggregation, SlotSettings};
use crate::config::SimConfig;
use crate::data::AttackKind;
use crate::ddpg::{reward, test_policy, train, Agent, PolicyTrace, SlotLog, TrainingReport};
use crate::error::{invalid, Result, SimError};
use crate::metrics::{MetricsRow, RowKind};
use crate::scenario::{Scenario, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Ddafl,
    DdaflNoDefense,
    DdaflNoLt,
    DdaflNoCt,
    PlainAfl,
    SyncFl,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [
        Scheme::Ddafl,
        Scheme::DdaflNoDefense,
        Scheme::DdaflNoLt,
        Scheme::DdaflNoCt,
        Scheme::PlainAfl,
        Scheme::SyncFl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Ddafl => "ddafl",
            Scheme::DdaflNoDefense => "ddafl_no_defense",
            Scheme::DdaflNoLt => "ddafl_no_lt",
            Scheme::DdaflNoCt => "ddafl_no_ct",
            Scheme::PlainAfl => "plain_afl",
            Scheme::SyncFl => "sync_fl",
        }
    }

    /// Whether the scheme selects vehicles with a trained agent.
    pub fn uses_agent(self) -> bool {
        !matches!(self, Scheme::PlainAfl | Scheme::SyncFl)
    }

    /// Aggregation settings used while testing.
    pub fn slot_settings(self, cfg: &SimConfig) -> SlotSettings {
        let base = SlotSettings::from_config(cfg);
        match self {
            Scheme::Ddafl => base,
            Scheme::DdaflNoDefense => SlotSettings {
                defense: false,
                ..base
            },
            Scheme::DdaflNoLt => SlotSettings {
                local_weight: false,
                ..base
            },
            Scheme::DdaflNoCt => SlotSettings {
                tx_weight: false,
                ..base
            },
            Scheme::PlainAfl => SlotSettings {
                aggregation: Aggregation::PlainAsync,
                defense: false,
                ..base
            },
            Scheme::SyncFl => SlotSettings {
                aggregation: Aggregation::Synchronous,
                defense: false,
                ..base
            },
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| SimError::UnknownScheme(s.to_string()))
    }
}

/// Output of one `(scheme, config, seed)` cell.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub scheme: Scheme,
    pub training: Option<TrainingReport>,
    pub test: PolicyTrace,
    pub rows: Vec<MetricsRow>,
}

impl ExperimentResult {
    /// Mean over test episodes of the final slot's average loss.
    pub fn final_loss(&self) -> f64 {
        mean(final_slots(&self.test.slots).map(|s| s.outcome.avg_loss))
    }

    /// Mean over test episodes of the final slot's test error rate.
    pub fn final_error(&self) -> f64 {
        mean(final_slots(&self.test.slots).map(|s| s.eval.error_rate))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Last slot of every episode, in episode order.
pub fn final_slots(slots: &[SlotLog]) -> impl Iterator<Item = &SlotLog> {
    slots
        .iter()
        .enumerate()
        .filter(move |(i, s)| {
            slots
                .get(i + 1)
                .is_none_or(|n| n.episode != s.episode || n.stage != s.stage)
        })
        .map(|(_, s)| s)
}

/// Stable identifier of a run cell.
pub fn run_id(scheme: Scheme, cfg: &SimConfig) -> String {
    format!("{}-s{}-{}", scheme.as_str(), cfg.seed, cfg.hash())
}

/// Metrics rows for a list of slot logs, with an episode summary after each
/// episode's last slot.
pub fn rows_for(
    scheme: Scheme,
    cfg: &SimConfig,
    attacked_fraction: f64,
    slots: &[SlotLog],
) -> Vec<MetricsRow> {
    let run = run_id(scheme, cfg);
    let hash = cfg.hash();
    let mut rows = Vec::with_capacity(slots.len() + slots.len() / cfg.slots_per_episode.max(1) + 1);
    let mut episode_reward = 0.0;
    let mut played = 0;
    for (i, s) in slots.iter().enumerate() {
        let (b1, b2) = s.outcome.mean_betas();
        let row = MetricsRow {
            run_id: run.clone(),
            config_hash: hash.clone(),
            scheme: scheme.as_str().to_string(),
            stage: s.stage.as_str().to_string(),
            kind: RowKind::Slot,
            episode: s.episode,
            slot: s.slot,
            avg_loss: s.outcome.avg_loss,
            accuracy: s.eval.accuracy,
            error_rate: s.eval.error_rate,
            reward: s.reward,
            attacked_fraction,
            selected_count: s.mask.iter().filter(|&&m| m).count(),
            accepted_count: s.outcome.accepted,
            rejected_count: s.outcome.rejected,
            mean_delay: s.outcome.mean_delay(),
            mean_beta1: b1,
            mean_beta2: b2,
            rsu_loss: s.outcome.rsu_loss,
            filter_violations: s.outcome.filter_violations,
            mask: s.mask.iter().map(|&m| if m { '1' } else { '0' }).collect(),
        };
        episode_reward += s.reward;
        played += 1;
        let last = slots
            .get(i + 1)
            .is_none_or(|n| n.episode != s.episode || n.stage != s.stage);
        rows.push(row);
        if last {
            let mut summary = rows.last().expect("just pushed").clone();
            summary.kind = RowKind::Episode;
            summary.slot = played;
            summary.reward = episode_reward;
            rows.push(summary);
            episode_reward = 0.0;
            played = 0;
        }
    }
    rows
}

/// Runs a baseline (every vehicle, no agent) over the test episodes.
pub fn run_baseline(scenario: &Scenario, scheme: Scheme) -> Result<PolicyTrace> {
    if scheme.uses_agent() {
        return Err(invalid("scheme", format!("{scheme} is not a baseline")));
    }
    let cfg = &scenario.cfg;
    let k = scenario.num_vehicles();
    let settings = scheme.slot_settings(cfg);
    let mut trace = PolicyTrace {
        episode_rewards: Vec::with_capacity(cfg.test_episodes),
        slots: Vec::new(),
        admissions: vec![0; k],
    };
    let lambdas = vec![1.0; k];
    let all: Vec<usize> = (0..k).collect();
    for e in 0..cfg.test_episodes {
        let mut ep = scenario.episode(Stage::Test, e, true)?;
        let mut total = 0.0;
        for _ in 0..cfg.slots_per_episode {
            let slot = ep.slot();
            let outcome = ep.step(&all, &settings)?;
            let eval = ep.evaluate()?;
            let mut delays = vec![0.0; k];
            let mut uploaded = vec![false; k];
            for &(id, d) in &outcome.delays {
                delays[id] = d;
                uploaded[id] = true;
            }
            let r = reward(
                &lambdas,
                &uploaded,
                outcome.avg_loss,
                &delays,
                cfg.w1,
                cfg.w2,
            )?;
            total += r;
            trace.admissions.iter_mut().for_each(|a| *a += 1);
            trace.slots.push(SlotLog {
                stage: Stage::Test,
                episode: e,
                slot,
                lambdas: lambdas.clone(),
                mask: vec![true; k],
                reward: r,
                outcome,
                eval,
            });
        }
        trace.episode_rewards.push(total);
    }
    Ok(trace)
}

/// Trains an agent for `scheme` (attack-free, filter off) on `scenario`.
pub fn train_agent(scenario: &Scenario, scheme: Scheme) -> Result<TrainingReport> {
    if !scheme.uses_agent() {
        return Err(invalid(
            "scheme",
            format!("{scheme} does not train an agent"),
        ));
    }
    train(scenario, &scheme.slot_settings(&scenario.cfg))
}

/// Tests an already trained agent under `scheme`'s settings.
pub fn test_agent(scenario: &Scenario, scheme: Scheme, agent: &Agent) -> Result<PolicyTrace> {
    test_policy(
        agent,
        scenario,
        &scheme.slot_settings(&scenario.cfg),
        scenario.cfg.test_episodes,
    )
}

/// Full cell: train (for agent schemes) then test, with metrics rows for both
/// stages.
pub fn run_experiment(cfg: &SimConfig, scheme: Scheme) -> Result<ExperimentResult> {
    let scenario = Scenario::new(cfg)?;
    let fraction = scenario.attacked_fraction();
    if !scheme.uses_agent() {
        let test = run_baseline(&scenario, scheme)?;
        let rows = rows_for(scheme, cfg, fraction, &test.slots);
        return Ok(ExperimentResult {
            scheme,
            training: None,
            test,
            rows,
        });
    }
    let training = train_agent(&scenario, scheme)?;
    let test = test_agent(&scenario, scheme, &training.agent)?;
    let mut rows = rows_for(scheme, cfg, 0.0, &training.slots);
    rows.extend(rows_for(scheme, cfg, fraction, &test.slots));
    Ok(ExperimentResult {
        scheme,
        training: Some(training),
        test,
        rows,
    })
}

/// Attacked vehicles for a fraction of the fleet: the first `round(f K)` ids.
pub fn attacked_ids(fraction: f64, k: usize) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(invalid(
            "fractions",
            format!("{fraction} is outside [0, 1]"),
        ));
    }
    Ok((0..(fraction * k as f64).round() as usize).collect())
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub fraction: f64,
    pub attacked: Vec<usize>,
    pub defended: PolicyTrace,
    pub undefended: PolicyTrace,
    pub defended_error: f64,
    pub undefended_error: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub rows: Vec<MetricsRow>,
}

/// For each fraction, tests the defended and undefended schemes under one
/// shared trained agent and paired seeds. Training never sees attacks, so a
/// single agent serves every fraction.
pub fn attack_sweep(cfg: &SimConfig, attack: AttackKind, fractions: &[f64]) -> Result<SweepResult> {
    let base = SimConfig {
        attack: AttackKind::None,
        ..cfg.clone()
    };
    let agent = train_agent(&Scenario::new(&base)?, Scheme::Ddafl)?.agent;
    let mut points = Vec::with_capacity(fractions.len());
    let mut rows = Vec::new();
    for &fraction in fractions {
        let attacked = attacked_ids(fraction, cfg.num_vehicles)?;
        let cell = SimConfig {
            attack,
            attacked_vehicles: attacked.clone(),
            ..cfg.clone()
        };
        let scenario = Scenario::new(&cell)?;
        let defended = test_agent(&scenario, Scheme::Ddafl, &agent)?;
        let undefended = test_agent(&scenario, Scheme::DdaflNoDefense, &agent)?;
        let frac = scenario.attacked_fraction();
        rows.extend(rows_for(Scheme::Ddafl, &cell, frac, &defended.slots));
        rows.extend(rows_for(
            Scheme::DdaflNoDefense,
            &cell,
            frac,
            &undefended.slots,
        ));
        points.push(SweepPoint {
            fraction,
            defended_error: mean(final_slots(&defended.slots).map(|s| s.eval.error_rate)),
            undefended_error: mean(final_slots(&undefended.slots).map(|s| s.eval.error_rate)),
            attacked,
            defended,
            undefended,
        });
    }
    Ok(SweepResult { points, rows })
}
