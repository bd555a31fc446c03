//! DDPG agent that learns per-vehicle admission probabilities.
//!
//! The observation is the concatenation of uplink rates, compute capacities,
//! x-coordinates and the previous action, each block scaled into `[0, 1]`.
//! The actor emits one probability per vehicle; a vehicle is admitted when its
//! probability reaches 0.5.

mod agent;
mod noise;
mod replay;
mod train;

pub use agent::{
    actor_objective_and_gradient, critic_loss_and_gradient, soft_update, target_value, Adam, Agent,
    AgentSettings, CheckpointManifest, UpdateStats,
};
pub use noise::{ou_step, OuNoise};
pub use replay::{ReplayBuffer, Transition};
pub use train::{test_policy, train, PolicyTrace, SlotLog, TrainingReport};

use crate::error::{invalid, Result, SimError};
use crate::model::argmax;
use crate::world::VehicleProfile;

/// Fixed scales that map each state block into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateScales {
    pub rate: f64,
    pub compute: f64,
    /// Half-width of RSU coverage along x.
    pub coverage: f64,
}

impl StateScales {
    pub fn from_config(cfg: &crate::config::SimConfig) -> Self {
        Self {
            rate: cfg.bandwidth_hz * 40.0,
            compute: cfg.compute_max(),
            coverage: cfg.coverage_radius,
        }
    }
}

/// Raw per-slot observation of all `K` vehicles.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub rates: Vec<f64>,
    pub computes: Vec<f64>,
    pub x_coords: Vec<f64>,
    pub prev_action: Vec<f64>,
}

impl SystemState {
    pub fn num_vehicles(&self) -> usize {
        self.rates.len()
    }

    /// Flattened, normalised network input of length `4K`.
    pub fn observation(&self, scales: &StateScales) -> Vec<f64> {
        let clamp = |v: f64| {
            if v.is_finite() {
                v.clamp(0.0, 1.0)
            } else {
                0.0
            }
        };
        let mut obs = Vec::with_capacity(4 * self.num_vehicles());
        obs.extend(self.rates.iter().map(|r| clamp(r / scales.rate)));
        obs.extend(self.computes.iter().map(|c| clamp(c / scales.compute)));
        obs.extend(
            self.x_coords
                .iter()
                .map(|x| clamp((x / scales.coverage + 1.0) / 2.0)),
        );
        obs.extend(self.prev_action.iter().map(|&a| clamp(a)));
        obs
    }
}

/// Assembles the state from the current vehicle profiles and last action.
pub fn build_state(profiles: &[VehicleProfile], prev_action: &Action) -> Result<SystemState> {
    if profiles.is_empty() {
        return Err(invalid("num_vehicles", "state needs at least one vehicle"));
    }
    if prev_action.len() != profiles.len() {
        return Err(SimError::ShapeMismatch {
            expected: format!("{} previous probabilities", profiles.len()),
            actual: prev_action.len().to_string(),
        });
    }
    Ok(SystemState {
        rates: profiles.iter().map(|p| p.rate).collect(),
        computes: profiles.iter().map(|p| p.compute).collect(),
        x_coords: profiles.iter().map(|p| p.position.x).collect(),
        prev_action: prev_action.lambdas.clone(),
    })
}

/// Admission probabilities, one per vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub lambdas: Vec<f64>,
}

impl Action {
    /// Every vehicle starts fully admitted.
    pub fn initial(k: usize) -> Self {
        Self {
            lambdas: vec![1.0; k],
        }
    }

    /// Clips raw values into `[floor, 1]`; non-finite values map to `floor`.
    pub fn clipped(raw: &[f64], floor: f64) -> Self {
        Self {
            lambdas: raw
                .iter()
                .map(|&v| {
                    if v.is_finite() {
                        v.clamp(floor, 1.0)
                    } else {
                        floor
                    }
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

/// Admits every vehicle with probability at least 0.5; when none qualifies
/// the most probable vehicle (lowest id on ties) is admitted alone.
pub fn binarize(action: &Action) -> Vec<bool> {
    let mut mask: Vec<bool> = action.lambdas.iter().map(|&l| l >= 0.5).collect();
    if !mask.iter().any(|&m| m) && !mask.is_empty() {
        mask[argmax(action.lambdas.iter().copied())] = true;
    }
    mask
}

pub fn selected_ids(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| i)
        .collect()
}

/// `-(K / sum(lambda)) * (w1 * loss + w2 * mean delay of admitted vehicles)`.
/// `delays[i]` is `T_l + T_u` and only counts where `mask[i]` holds.
pub fn reward(
    lambdas: &[f64],
    mask: &[bool],
    avg_loss: f64,
    delays: &[f64],
    w1: f64,
    w2: f64,
) -> Result<f64> {
    let k = lambdas.len();
    if mask.len() != k || delays.len() != k {
        return Err(SimError::ShapeMismatch {
            expected: format!("{k} mask entries and delays"),
            actual: format!("{} and {}", mask.len(), delays.len()),
        });
    }
    let lambda_sum: f64 = lambdas.iter().sum();
    if !(lambda_sum > 0.0) {
        return Err(invalid("lambdas", "probabilities must not all be zero"));
    }
    let admitted = mask.iter().filter(|&&m| m).count();
    if admitted == 0 {
        return Err(SimError::EmptySelection);
    }
    let delay_sum: f64 = delays
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(d, _)| d)
        .sum();
    let cost = w1 * avg_loss + w2 * delay_sum / admitted as f64;
    Ok(-(k as f64 / lambda_sum) * cost)
}
