//! Goal-conditioned DDPG: exploration, TD targets, critic regression and the
//! deterministic policy gradient.
//!
//! The actor sees `(observation, goal)` and the critic
//! `(observation, action, goal)`, concatenated in that order.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::nn::{polyak_update, Activation, AdamState, Mlp};
use crate::replay::Transition;
use crate::sim::{GOAL_DIM, OBS_DIM};

pub const ACTION_DIM: usize = 3;
pub const ACTOR_INPUT: usize = OBS_DIM + GOAL_DIM;
pub const CRITIC_INPUT: usize = OBS_DIM + ACTION_DIM + GOAL_DIM;
const ACTION_SLICE: std::ops::Range<usize> = OBS_DIM..OBS_DIM + ACTION_DIM;

/// How an emergency-stop transition is valued.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstopTarget {
    /// `y = r`: the episode simply ends.
    Masked,
    /// `y = r / (1 - gamma)`: the halted gripper stays stuck and keeps
    /// collecting the same reward forever.
    Absorbing,
}

impl EstopTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            EstopTarget::Masked => "masked",
            EstopTarget::Absorbing => "absorbing",
        }
    }
}

impl std::fmt::Display for EstopTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EstopTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "masked" => Ok(EstopTarget::Masked),
            "absorbing" => Ok(EstopTarget::Absorbing),
            other => Err(Error::Config(format!(
                "unknown estop target {other:?} (masked|absorbing)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentHyper {
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    /// Std of the Gaussian exploration noise, action units.
    pub noise_std: f64,
    pub polyak: f64,
    pub updates_per_episode: usize,
    pub hidden: Vec<usize>,
    pub target_networks: bool,
    pub estop_target: EstopTarget,
}

impl Default for AgentHyper {
    fn default() -> Self {
        Self {
            gamma: 0.98,
            actor_lr: 0.001,
            critic_lr: 0.001,
            batch_size: 128,
            noise_std: 0.1,
            polyak: 0.995,
            updates_per_episode: 40,
            hidden: vec![64, 64],
            target_networks: true,
            estop_target: EstopTarget::Absorbing,
        }
    }
}

impl AgentHyper {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "gamma {} outside [0, 1)",
                self.gamma
            )));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Config("noise std must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.polyak) {
            return Err(Error::Config("polyak rho must lie in [0, 1]".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn actor_dims(&self) -> Vec<usize> {
        let mut d = vec![ACTOR_INPUT];
        d.extend(&self.hidden);
        d.push(ACTION_DIM);
        d
    }

    pub fn critic_dims(&self) -> Vec<usize> {
        let mut d = vec![CRITIC_INPUT];
        d.extend(&self.hidden);
        d.push(1);
        d
    }
}

// Fixed affine scaling that brings every observation slot to roughly unit
// range: (value - centre) / spread. Slot order follows `sim::slot`.
const OBS_CENTRE: [f64; OBS_DIM] = [
    0.3, 0.3, 0.05, 0.0, 0.0, 0.0, 0.3, 0.3, 0.0, 0.0, 0.0, 0.05, 0.0, 0.0, 0.0, 0.0,
];
const OBS_SPREAD: [f64; OBS_DIM] = [
    0.2, 0.2, 0.05, 0.1, 0.1, 0.1, 0.2, 0.2, PI, 0.1, 0.1, 0.05, 1.0, 1.0, 1.0, 0.1,
];
const GOAL_CENTRE: f64 = 0.3;
const GOAL_SPREAD: f64 = 0.2;

fn scaled_observation(observation: &[f64; OBS_DIM]) -> [f64; OBS_DIM] {
    std::array::from_fn(|i| (observation[i] - OBS_CENTRE[i]) / OBS_SPREAD[i])
}

fn scaled_goal(goal: [f64; 2]) -> [f64; 2] {
    goal.map(|g| (g - GOAL_CENTRE) / GOAL_SPREAD)
}

/// Network input `(observation, goal)`, each slot rescaled to unit range.
pub fn actor_input(observation: &[f64; OBS_DIM], goal: [f64; 2]) -> [f64; ACTOR_INPUT] {
    let mut x = [0.0; ACTOR_INPUT];
    x[..OBS_DIM].copy_from_slice(&scaled_observation(observation));
    x[OBS_DIM..].copy_from_slice(&scaled_goal(goal));
    x
}

/// Network input `(observation, action, goal)`; the action is passed as is.
pub fn critic_input(
    observation: &[f64; OBS_DIM],
    action: [f64; 3],
    goal: [f64; 2],
) -> [f64; CRITIC_INPUT] {
    let mut x = [0.0; CRITIC_INPUT];
    x[..OBS_DIM].copy_from_slice(&scaled_observation(observation));
    x[ACTION_SLICE].copy_from_slice(&action);
    x[OBS_DIM + ACTION_DIM..].copy_from_slice(&scaled_goal(goal));
    x
}

fn to_action(v: &[f64]) -> [f64; 3] {
    [v[0], v[1], v[2]]
}

/// Noise-free policy output.
pub fn policy_action(
    actor: &Mlp,
    observation: &[f64; OBS_DIM],
    goal: [f64; 2],
) -> Result<[f64; 3]> {
    check_dim("actor output", ACTION_DIM, actor.output_dim())?;
    Ok(to_action(&actor.forward(&actor_input(observation, goal))?))
}

/// `clip(pi(obs, g) + eps, -1, 1)` with `eps ~ N(0, sigma^2)` per component.
pub fn select_action<R: Rng + ?Sized>(
    actor: &Mlp,
    observation: &[f64; OBS_DIM],
    goal: [f64; 2],
    sigma: f64,
    rng: &mut R,
) -> Result<[f64; 3]> {
    let mut a = policy_action(actor, observation, goal)?;
    if sigma > 0.0 {
        for ai in &mut a {
            let eps: f64 = rng.sample(StandardNormal);
            *ai = (*ai + sigma * eps).clamp(-1.0, 1.0);
        }
    }
    Ok(a)
}

pub fn q_value(
    critic: &Mlp,
    observation: &[f64; OBS_DIM],
    action: [f64; 3],
    goal: [f64; 2],
) -> Result<f64> {
    Ok(critic.forward(&critic_input(observation, action, goal))?[0])
}

/// `y_i = r_i + gamma * Q(s_{i+1}, pi(s_{i+1}), g_i)`, or `r_i` for terminal
/// (emergency-stop) transitions.
pub fn td_target(critic: &Mlp, actor: &Mlp, batch: &[Transition], gamma: f64) -> Result<Vec<f64>> {
    td_target_with(critic, actor, batch, gamma, EstopTarget::Masked)
}

/// [`td_target`] with a choice of value for terminal transitions.
pub fn td_target_with(
    critic: &Mlp,
    actor: &Mlp,
    batch: &[Transition],
    gamma: f64,
    estop: EstopTarget,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Contract("td_target on an empty batch".into()));
    }
    batch
        .iter()
        .map(|tr| {
            if tr.terminal {
                return Ok(match estop {
                    EstopTarget::Masked => tr.reward,
                    EstopTarget::Absorbing => tr.reward / (1.0 - gamma),
                });
            }
            let next_action = policy_action(actor, &tr.next_observation, tr.goal)?;
            let q = q_value(critic, &tr.next_observation, next_action, tr.goal)?;
            Ok(tr.reward + gamma * q)
        })
        .collect()
}

/// Mean squared TD error and its gradient with respect to the critic.
pub fn critic_loss_and_grad(
    critic: &Mlp,
    batch: &[Transition],
    y: &[f64],
) -> Result<(f64, Vec<f64>)> {
    check_dim("td targets", batch.len(), y.len())?;
    if batch.is_empty() {
        return Err(Error::Contract("critic update on an empty batch".into()));
    }
    let n = batch.len() as f64;
    let mut grads = vec![0.0; critic.params().len()];
    let mut loss = 0.0;
    for (tr, &yi) in batch.iter().zip(y) {
        let trace = critic.forward_trace(&critic_input(&tr.observation, tr.action, tr.goal))?;
        let err = yi - trace.output()[0];
        loss += err * err;
        critic.backward_accumulate(&trace, &[-2.0 * err / n], Some(&mut grads))?;
    }
    Ok((loss / n, grads))
}

/// One Adam step on the critic loss; returns the loss before the step.
pub fn critic_update(
    critic: &mut Mlp,
    opt: &mut AdamState,
    batch: &[Transition],
    y: &[f64],
) -> Result<f64> {
    let (loss, grads) = critic_loss_and_grad(critic, batch, y)?;
    opt.step(critic.params_mut(), &grads)?;
    Ok(loss)
}

/// `J = mean_i Q(s_i, pi(s_i), g_i)` and its gradient with respect to the
/// actor parameters, chained through the critic's action-input gradient.
pub fn actor_objective_and_grad(
    actor: &Mlp,
    critic: &Mlp,
    batch: &[Transition],
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Contract("actor update on an empty batch".into()));
    }
    let n = batch.len() as f64;
    let mut grads = vec![0.0; actor.params().len()];
    let mut total = 0.0;
    for tr in batch {
        let actor_trace = actor.forward_trace(&actor_input(&tr.observation, tr.goal))?;
        let action = to_action(actor_trace.output());
        let critic_trace = critic.forward_trace(&critic_input(&tr.observation, action, tr.goal))?;
        total += critic_trace.output()[0];
        let dq_dx = critic.backward_accumulate(&critic_trace, &[1.0 / n], None)?;
        actor.backward_accumulate(&actor_trace, &dq_dx[ACTION_SLICE], Some(&mut grads))?;
    }
    Ok((total / n, grads))
}

/// One Adam ascent step on `J`; returns `J` before the step.
pub fn actor_update(
    actor: &mut Mlp,
    critic: &Mlp,
    opt: &mut AdamState,
    batch: &[Transition],
) -> Result<f64> {
    let (objective, mut grads) = actor_objective_and_grad(actor, critic, batch)?;
    for g in &mut grads {
        *g = -*g;
    }
    opt.step(actor.params_mut(), &grads)?;
    Ok(objective)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub mean_q: f64,
}

/// Actor, critic, their targets, and both optimizers.
#[derive(Clone, Debug, PartialEq)]
pub struct Agent {
    pub hyper: AgentHyper,
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_target: Mlp,
    pub critic_target: Mlp,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(hyper: AgentHyper, rng: &mut R) -> Result<Self> {
        hyper.validate()?;
        let actor = Mlp::random(&hyper.actor_dims(), Activation::Tanh, Activation::Tanh, rng)?;
        let critic = Mlp::random(
            &hyper.critic_dims(),
            Activation::Tanh,
            Activation::Identity,
            rng,
        )?;
        Ok(Self {
            actor_opt: AdamState::new(actor.params().len(), hyper.actor_lr),
            critic_opt: AdamState::new(critic.params().len(), hyper.critic_lr),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            hyper,
        })
    }

    pub fn act(&self, observation: &[f64; OBS_DIM], goal: [f64; 2]) -> Result<[f64; 3]> {
        policy_action(&self.actor, observation, goal)
    }

    pub fn explore<R: Rng + ?Sized>(
        &self,
        observation: &[f64; OBS_DIM],
        goal: [f64; 2],
        rng: &mut R,
    ) -> Result<[f64; 3]> {
        select_action(&self.actor, observation, goal, self.hyper.noise_std, rng)
    }

    /// Critic regression, policy ascent, then target averaging.
    pub fn train_step(&mut self, batch: &[Transition]) -> Result<UpdateStats> {
        let (critic, actor) = if self.hyper.target_networks {
            (&self.critic_target, &self.actor_target)
        } else {
            (&self.critic, &self.actor)
        };
        let y = td_target_with(
            critic,
            actor,
            batch,
            self.hyper.gamma,
            self.hyper.estop_target,
        )?;
        let critic_loss = critic_update(&mut self.critic, &mut self.critic_opt, batch, &y)?;
        let mean_q = actor_update(&mut self.actor, &self.critic, &mut self.actor_opt, batch)?;
        if self.hyper.target_networks {
            polyak_update(&mut self.critic_target, &self.critic, self.hyper.polyak)?;
            polyak_update(&mut self.actor_target, &self.actor, self.hyper.polyak)?;
        }
        Ok(UpdateStats {
            critic_loss,
            mean_q,
        })
    }

    pub fn is_finite(&self) -> bool {
        [
            &self.actor,
            &self.critic,
            &self.actor_target,
            &self.critic_target,
        ]
        .iter()
        .all(|n| n.is_finite())
    }
}
