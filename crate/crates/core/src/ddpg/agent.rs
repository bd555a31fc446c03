//! Actor and critic networks with target copies, Adam updates and
//! checkpointing.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::replay::Transition;
use crate::config::SimConfig;
use crate::error::{invalid, Result, SimError};
use crate::model::{ModelParams, OutputActivation};
use crate::rng::{derive, stream, tag};

/// `y = r + gamma * Q'(s', mu'(s'))`; no terminal cut-off.
pub fn target_value(reward: f64, gamma: f64, target_q_next: f64) -> f64 {
    reward + gamma * target_q_next
}

/// `tau * online + (1 - tau) * target`.
pub fn soft_update(online: &ModelParams, target: &ModelParams, tau: f64) -> Result<ModelParams> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(invalid("tau", format!("must lie in (0, 1], got {tau}")));
    }
    online.lincomb(tau, target, 1.0 - tau)
}

/// Adam on a [`ModelParams`]-shaped parameter set (descent direction).
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    m: ModelParams,
    v: ModelParams,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(like: &ModelParams, lr: f64) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(invalid(
                "learning_rate",
                format!("must be positive, got {lr}"),
            ));
        }
        let zeros = ModelParams::zeros(&like.architecture(), like.output_activation())?;
        Ok(Self {
            lr,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        })
    }

    /// Moves `params` against `grad`.
    pub fn step(&mut self, params: &mut ModelParams, grad: &ModelParams) -> Result<()> {
        self.t += 1;
        self.m
            .zip_apply(grad, |m, g| *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g)?;
        self.v.zip_apply(grad, |v, g| {
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g
        })?;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let (mut m_hat, v) = (self.m.scaled(1.0 / c1), &self.v);
        m_hat.zip_apply(v, |m, v| *m /= (v / c2).sqrt() + Self::EPS)?;
        params.zip_apply(&m_hat, |p, d| *p -= self.lr * d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSettings {
    pub num_vehicles: usize,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub tau: f64,
}

impl AgentSettings {
    pub fn from_config(cfg: &SimConfig) -> Self {
        Self {
            num_vehicles: cfg.num_vehicles,
            actor_hidden: cfg.actor_hidden.clone(),
            critic_hidden: cfg.critic_hidden.clone(),
            actor_lr: cfg.actor_lr,
            critic_lr: cfg.critic_lr,
            gamma: cfg.gamma,
            tau: cfg.tau,
        }
    }

    pub fn actor_architecture(&self) -> Vec<usize> {
        let k = self.num_vehicles;
        std::iter::once(4 * k)
            .chain(self.actor_hidden.iter().copied())
            .chain(std::iter::once(k))
            .collect()
    }

    pub fn critic_architecture(&self) -> Vec<usize> {
        let k = self.num_vehicles;
        std::iter::once(5 * k)
            .chain(self.critic_hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect()
    }
}

/// Rows `[s, a]` for the critic.
fn critic_input(states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array2<f64>> {
    concatenate(Axis(1), &[states, actions]).map_err(|e| SimError::ShapeMismatch {
        expected: "equal state and action row counts".into(),
        actual: e.to_string(),
    })
}

/// Mean squared TD error and its exact gradient in the critic parameters.
pub fn critic_loss_and_gradient(
    critic: &ModelParams,
    states: ArrayView2<f64>,
    actions: ArrayView2<f64>,
    targets: &[f64],
) -> Result<(f64, ModelParams)> {
    let n = targets.len();
    if n == 0 {
        return Err(SimError::EmptyBatch);
    }
    if states.nrows() != n {
        return Err(SimError::ShapeMismatch {
            expected: format!("{n} state rows"),
            actual: states.nrows().to_string(),
        });
    }
    let trace = critic.forward_batch(critic_input(states, actions)?.view())?;
    let mut d_out = Array2::zeros((n, 1));
    let mut loss = 0.0;
    for (i, &y) in targets.iter().enumerate() {
        let err = trace.output[[i, 0]] - y;
        loss += err * err;
        d_out[[i, 0]] = 2.0 * err / n as f64;
    }
    let (grad, _) = critic.backward(&trace, d_out);
    Ok((loss / n as f64, grad))
}

/// Sampled policy objective `J = mean_i Q(s_i, mu(s_i))` and its gradient in
/// the actor parameters, chained through the critic's action input.
pub fn actor_objective_and_gradient(
    actor: &ModelParams,
    critic: &ModelParams,
    states: ArrayView2<f64>,
) -> Result<(f64, ModelParams)> {
    let n = states.nrows();
    if n == 0 {
        return Err(SimError::EmptyBatch);
    }
    if actor.output_activation() != OutputActivation::Sigmoid {
        return Err(invalid("actor", "output layer must be a sigmoid"));
    }
    let a_trace = actor.forward_batch(states)?;
    let c_trace = critic.forward_batch(critic_input(states, a_trace.output.view())?.view())?;
    let objective = c_trace.output.sum() / n as f64;
    let (_, d_input) = critic.backward(&c_trace, Array2::from_elem((n, 1), 1.0 / n as f64));
    let state_width = states.ncols();
    let d_action = d_input.slice(s![.., state_width..]);
    let d_logits = &d_action * &a_trace.output.mapv(|a| a * (1.0 - a));
    let (grad, _) = actor.backward(&a_trace, d_logits);
    Ok((objective, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_objective: f64,
}

/// Written next to the four networks in a checkpoint directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub episodes: usize,
    pub config_hash: String,
    pub rng_digest: String,
    pub num_vehicles: usize,
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub settings: AgentSettings,
    pub actor: ModelParams,
    pub critic: ModelParams,
    pub target_actor: ModelParams,
    pub target_critic: ModelParams,
    actor_opt: Adam,
    critic_opt: Adam,
    updates: u64,
}

const NET_FILES: [&str; 4] = [
    "actor.bin",
    "critic.bin",
    "target_actor.bin",
    "target_critic.bin",
];

/// Final-layer weights drawn from `+-3e-3` so initial outputs sit near the
/// middle of the output range.
fn init_net(arch: &[usize], output: OutputActivation, seed: u64) -> Result<ModelParams> {
    let mut net = ModelParams::init(arch, output, seed)?;
    let mut rng = stream(seed, &[tag::AGENT_INIT]);
    if let Some(last) = net.weights_mut().last_mut() {
        last.mapv_inplace(|_| rng.random_range(-3e-3..=3e-3));
    }
    Ok(net)
}

impl Agent {
    pub fn new(settings: AgentSettings, seed: u64) -> Result<Self> {
        if settings.num_vehicles == 0 {
            return Err(invalid("num_vehicles", "must be at least 1"));
        }
        let actor = init_net(
            &settings.actor_architecture(),
            OutputActivation::Sigmoid,
            derive(seed, &[tag::AGENT_INIT, 0]),
        )?;
        let critic = init_net(
            &settings.critic_architecture(),
            OutputActivation::Linear,
            derive(seed, &[tag::AGENT_INIT, 1]),
        )?;
        Self::from_nets(settings, actor.clone(), critic.clone(), actor, critic)
    }

    fn from_nets(
        settings: AgentSettings,
        actor: ModelParams,
        critic: ModelParams,
        target_actor: ModelParams,
        target_critic: ModelParams,
    ) -> Result<Self> {
        if actor.architecture() != settings.actor_architecture()
            || critic.architecture() != settings.critic_architecture()
            || !actor.same_shape(&target_actor)
            || !critic.same_shape(&target_critic)
        {
            return Err(SimError::ShapeMismatch {
                expected: format!(
                    "actor {:?}, critic {:?}",
                    settings.actor_architecture(),
                    settings.critic_architecture()
                ),
                actual: format!(
                    "actor {:?}, critic {:?}",
                    actor.architecture(),
                    critic.architecture()
                ),
            });
        }
        Ok(Self {
            actor_opt: Adam::new(&actor, settings.actor_lr)?,
            critic_opt: Adam::new(&critic, settings.critic_lr)?,
            settings,
            actor,
            critic,
            target_actor,
            target_critic,
            updates: 0,
        })
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Deterministic policy output in `(0, 1)^K`.
    pub fn act(&self, observation: &[f64]) -> Result<Vec<f64>> {
        self.actor.forward(observation)
    }

    /// One critic step, one actor step and one soft update of both targets.
    pub fn update(&mut self, batch: &[&Transition]) -> Result<UpdateStats> {
        let n = batch.len();
        if n == 0 {
            return Err(SimError::EmptyBatch);
        }
        let k = self.settings.num_vehicles;
        let rows = |f: &dyn Fn(&Transition) -> &[f64], width: usize| -> Result<Array2<f64>> {
            let flat: Vec<f64> = batch.iter().flat_map(|t| f(t).iter().copied()).collect();
            Array2::from_shape_vec((n, width), flat).map_err(|e| SimError::ShapeMismatch {
                expected: format!("{n} rows of width {width}"),
                actual: e.to_string(),
            })
        };
        let states = rows(&|t| &t.state, 4 * k)?;
        let actions = rows(&|t| &t.action, k)?;
        let next_states = rows(&|t| &t.next_state, 4 * k)?;

        let next_actions = self.target_actor.forward_batch(next_states.view())?.output;
        let q_next = self
            .target_critic
            .forward_batch(critic_input(next_states.view(), next_actions.view())?.view())?
            .output;
        let targets: Vec<f64> = batch
            .iter()
            .enumerate()
            .map(|(i, t)| target_value(t.reward, self.settings.gamma, q_next[[i, 0]]))
            .collect();

        let (critic_loss, c_grad) =
            critic_loss_and_gradient(&self.critic, states.view(), actions.view(), &targets)?;
        self.critic_opt.step(&mut self.critic, &c_grad)?;

        let (actor_objective, a_grad) =
            actor_objective_and_gradient(&self.actor, &self.critic, states.view())?;
        self.actor_opt.step(&mut self.actor, &a_grad.scaled(-1.0))?;

        self.target_critic = soft_update(&self.critic, &self.target_critic, self.settings.tau)?;
        self.target_actor = soft_update(&self.actor, &self.target_actor, self.settings.tau)?;
        self.updates += 1;
        Ok(UpdateStats {
            critic_loss,
            actor_objective,
        })
    }

    pub fn save(&self, dir: &Path, manifest: &CheckpointManifest) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, net) in NET_FILES.iter().zip([
            &self.actor,
            &self.critic,
            &self.target_actor,
            &self.target_critic,
        ]) {
            net.write_to(BufWriter::new(File::create(dir.join(name))?))?;
        }
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(manifest)?,
        )?;
        Ok(())
    }

    /// Restores the four networks; optimiser moments start fresh.
    pub fn load(dir: &Path, settings: AgentSettings) -> Result<(Self, CheckpointManifest)> {
        let manifest: CheckpointManifest =
            serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.num_vehicles != settings.num_vehicles {
            return Err(invalid(
                "num_vehicles",
                format!(
                    "checkpoint has {} vehicles, config {}",
                    manifest.num_vehicles, settings.num_vehicles
                ),
            ));
        }
        let mut nets = Vec::with_capacity(4);
        for name in NET_FILES {
            nets.push(ModelParams::read_from(BufReader::new(File::open(
                dir.join(name),
            )?))?);
        }
        let [actor, critic, target_actor, target_critic]: [ModelParams; 4] =
            nets.try_into().expect("four networks read");
        Ok((
            Self::from_nets(settings, actor, critic, target_actor, target_critic)?,
            manifest,
        ))
    }
}
