//! Actor-critic base learner.
//!
//! The critic regresses `Q(s, a)` onto `r + gamma * Q_target(s', actor(s'))`;
//! the actor ascends `Q(s, actor(s))`. One critic step, one actor step and a
//! soft target update happen per environment interaction once the replay
//! memory holds a full batch.

mod replay;

use ndarray::{concatenate, s, Array2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use replay::ReplayBuffer;

use crate::nn::{Adam, AdamConfig, Network, NnError, OutputActivation};
use crate::persist::{Checkpoint, Decoder, Encoder, PersistError};
use crate::seed::Rng;
use crate::simulator::{Action, BuildingEnv, SimError, Transition, ACTION_DIM, OBS_DIM};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid agent configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    /// Target smoothing coefficient; the target is refreshed every update.
    pub tau: f64,
    pub exploration_noise_sigma: f64,
    pub buffer_capacity: usize,
    pub hidden_layers: Vec<usize>,
    /// Multiplies rewards inside the critic's regression targets only, so
    /// Q-values stay order one. Reported rewards are unscaled.
    pub reward_scale: f64,
    /// Lets the actor be pulled back when its raw output has left the action
    /// box. Off, the actor follows the exact gradient, which is zero there.
    pub recover_clamped: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            batch_size: 128,
            lr_actor: 1e-3,
            lr_critic: 1e-3,
            tau: 0.005,
            exploration_noise_sigma: 0.1,
            buffer_capacity: 100_000,
            hidden_layers: vec![64, 128, 64],
            reward_scale: 0.005,
            recover_clamped: false,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return bad("batch_size and buffer_capacity must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must lie in [0, 1]");
        }
        if !(self.lr_actor >= 0.0 && self.lr_critic >= 0.0 && self.exploration_noise_sigma >= 0.0) {
            return bad("learning rates and exploration noise must be >= 0");
        }
        if !(self.reward_scale.is_finite() && self.reward_scale > 0.0) {
            return bad("reward_scale must be > 0");
        }
        if self.hidden_layers.contains(&0) {
            return bad("hidden layer widths must be >= 1");
        }
        Ok(())
    }

    pub fn actor_sizes(&self) -> Vec<usize> {
        let mut s = vec![OBS_DIM];
        s.extend(&self.hidden_layers);
        s.push(ACTION_DIM);
        s
    }

    pub fn critic_sizes(&self) -> Vec<usize> {
        let mut s = vec![OBS_DIM + ACTION_DIM];
        s.extend(&self.hidden_layers);
        s.push(1);
        s
    }
}

/// A sampled minibatch laid out as matrices, one transition per row.
#[derive(Debug, Clone)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Array2<f64>,
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn from_transitions(ts: &[&Transition]) -> Result<Self, AgentError> {
        if ts.is_empty() {
            return Err(AgentError::EmptyBatch);
        }
        let n = ts.len();
        let mut states = Array2::zeros((n, OBS_DIM));
        let mut next_states = Array2::zeros((n, OBS_DIM));
        let mut actions = Array2::zeros((n, ACTION_DIM));
        for (i, t) in ts.iter().enumerate() {
            states.row_mut(i).assign(&ndarray::ArrayView1::from(&t.state));
            next_states.row_mut(i).assign(&ndarray::ArrayView1::from(&t.next_state));
            actions.row_mut(i).assign(&ndarray::ArrayView1::from(&t.action.to_array()));
        }
        Ok(Self {
            states,
            actions,
            rewards: ts.iter().map(|t| t.reward).collect(),
            next_states,
            dones: ts.iter().map(|t| t.done).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// A scalar loss and its gradient with respect to one network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Clamps raw actor outputs into the valid action box, row by row.
fn clamp_actions(mut a: Array2<f64>) -> Array2<f64> {
    for mut row in a.rows_mut() {
        let act = Action { esu_command: row[0], hvac_command: row[1] }.clamped();
        row[0] = act.esu_command;
        row[1] = act.hvac_command;
    }
    a
}

/// TD targets `r + gamma * Q_target(s', clamp(actor(s')))`, zero bootstrap at
/// the end of the trace. Treated as constants by the critic gradient.
pub fn td_targets(
    actor: &Network,
    target_critic: &Network,
    batch: &Batch,
    gamma: f64,
    reward_scale: f64,
) -> Result<Vec<f64>, AgentError> {
    let next_actions = clamp_actions(actor.forward(batch.next_states.view())?);
    let q_next = target_critic.forward(concatenate![Axis(1), batch.next_states, next_actions].view())?;
    Ok(batch
        .rewards
        .iter()
        .zip(&batch.dones)
        .zip(q_next.column(0))
        .map(|((&r, &done), &q)| if done { reward_scale * r } else { reward_scale * r + gamma * q })
        .collect())
}

/// Mean squared TD error and its gradient with respect to the critic.
pub fn critic_loss(
    actor: &Network,
    critic: &Network,
    target_critic: &Network,
    batch: &Batch,
    gamma: f64,
    reward_scale: f64,
) -> Result<LossGrad, AgentError> {
    if batch.is_empty() {
        return Err(AgentError::EmptyBatch);
    }
    let targets = td_targets(actor, target_critic, batch, gamma, reward_scale)?;
    critic_loss_with_targets(critic, batch, &targets)
}

/// Critic loss against fixed targets.
pub fn critic_loss_with_targets(critic: &Network, batch: &Batch, targets: &[f64]) -> Result<LossGrad, AgentError> {
    let n = batch.len();
    if n == 0 {
        return Err(AgentError::EmptyBatch);
    }
    let cache = critic.forward_cached(concatenate![Axis(1), batch.states, batch.actions].view())?;
    let q = cache.output().column(0).to_owned();
    let mut d_q = Array2::zeros((n, 1));
    let mut loss = 0.0;
    for i in 0..n {
        let diff = q[i] - targets[i];
        loss += diff * diff;
        d_q[[i, 0]] = 2.0 * diff / n as f64;
    }
    let mut grad = vec![0.0; critic.num_params()];
    critic.backward(&cache, d_q.view(), Some(&mut grad))?;
    Ok(LossGrad { loss: loss / n as f64, grad })
}

/// `-mean Q(s, clamp(actor(s)))` and its exact gradient with respect to the
/// actor.
///
/// The critic is scored at the action that would actually be executed, so it
/// is never asked to extrapolate outside the action box. The critic is only
/// differentiated through, never updated.
pub fn actor_loss(actor: &Network, critic: &Network, batch: &Batch) -> Result<LossGrad, AgentError> {
    actor_objective(actor, critic, batch, false)
}

/// Same loss as [`actor_loss`]; the direction the actor is trained along.
///
/// Where the clamp is active the exact gradient is zero, so an actor pushed
/// past a bound stays there for good. With `recover_clamped` the critic's
/// slope is kept when descending along it would pull the action back toward
/// the box, and dropped when it would push it further out.
pub fn actor_descent(
    actor: &Network,
    critic: &Network,
    batch: &Batch,
    recover_clamped: bool,
) -> Result<LossGrad, AgentError> {
    actor_objective(actor, critic, batch, recover_clamped)
}

fn actor_objective(actor: &Network, critic: &Network, batch: &Batch, recover: bool) -> Result<LossGrad, AgentError> {
    let n = batch.len();
    if n == 0 {
        return Err(AgentError::EmptyBatch);
    }
    let a_cache = actor.forward_cached(batch.states.view())?;
    let raw = a_cache.output();
    let clamped = clamp_actions(raw.clone());
    let c_cache = critic.forward_cached(concatenate![Axis(1), batch.states, clamped].view())?;
    let loss = -c_cache.output().column(0).sum() / n as f64;
    let d_q = Array2::from_elem((n, 1), -1.0 / n as f64);
    let d_input = critic.backward(&c_cache, d_q.view(), None)?;
    let mut d_action = d_input.slice(s![.., OBS_DIM..]).to_owned();
    // gap > 0: above the upper bound, so a descent step moves inward iff d > 0.
    d_action.zip_mut_with(&(raw - &clamped), |d, gap| {
        let inward = recover && *d * *gap > 0.0;
        if *gap != 0.0 && !inward {
            *d = 0.0;
        }
    });
    let mut grad = vec![0.0; actor.num_params()];
    actor.backward(&a_cache, d_action.view(), Some(&mut grad))?;
    Ok(LossGrad { loss, grad })
}

/// Phases of [`Agent::update_step_observed`], in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdatePhase {
    Critic,
    Actor,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
}

/// Actor, critic and target critic with their optimizers.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub config: AgentConfig,
    pub actor: Network,
    pub critic: Network,
    pub target_critic: Network,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    pub updates: u64,
}

impl Agent {
    /// Fresh agent with uniformly initialised networks (actor first, then critic).
    pub fn new(config: AgentConfig, rng: &mut Rng) -> Result<Self, AgentError> {
        config.validate()?;
        let actor = Network::new(&config.actor_sizes(), OutputActivation::Tanh, rng)?;
        let critic = Network::new(&config.critic_sizes(), OutputActivation::Identity, rng)?;
        Self::from_init(config, &actor, &critic)
    }

    /// Agent inheriting the given actor and critic; the target critic starts
    /// as a copy of the critic and both optimizers start fresh.
    pub fn from_init(config: AgentConfig, actor: &Network, critic: &Network) -> Result<Self, AgentError> {
        config.validate()?;
        let expect_actor = Network::zeros(&config.actor_sizes(), OutputActivation::Tanh)?;
        let expect_critic = Network::zeros(&config.critic_sizes(), OutputActivation::Identity)?;
        if !actor.same_architecture(&expect_actor) || !critic.same_architecture(&expect_critic) {
            return Err(NnError::ShapeMismatch {
                expected: format!("actor {:?}, critic {:?}", config.actor_sizes(), config.critic_sizes()),
                got: format!("actor {:?}, critic {:?}", actor.sizes(), critic.sizes()),
            }
            .into());
        }
        Ok(Self {
            actor_opt: Adam::new(actor.num_params(), AdamConfig::with_lr(config.lr_actor)),
            critic_opt: Adam::new(critic.num_params(), AdamConfig::with_lr(config.lr_critic)),
            actor: actor.clone(),
            critic: critic.clone(),
            target_critic: critic.clone(),
            config,
            updates: 0,
        })
    }

    /// Deterministic actor output, or with Gaussian exploration noise; the
    /// result is always clamped into the action box.
    pub fn act(&self, obs: &[f64], explore: bool, rng: &mut Rng) -> Result<Action, AgentError> {
        let y = self.actor.forward_one(obs)?;
        let (mut esu, mut hvac) = (y[0], y[1]);
        if explore {
            let sigma = self.config.exploration_noise_sigma;
            let n1: f64 = StandardNormal.sample(rng);
            let n2: f64 = StandardNormal.sample(rng);
            esu += sigma * n1;
            hvac += sigma * n2;
        }
        Ok(Action { esu_command: esu, hvac_command: hvac }.clamped())
    }

    pub fn update_step(&mut self, buffer: &ReplayBuffer, rng: &mut Rng) -> Result<Option<UpdateStats>, AgentError> {
        self.update_step_observed(buffer, rng, &mut |_| {})
    }

    /// One critic step, one actor step, then the soft target update.
    ///
    /// Returns `Ok(None)` without touching anything while the buffer holds
    /// fewer than `batch_size` transitions.
    pub fn update_step_observed(
        &mut self,
        buffer: &ReplayBuffer,
        rng: &mut Rng,
        observer: &mut dyn FnMut(UpdatePhase),
    ) -> Result<Option<UpdateStats>, AgentError> {
        if buffer.len() < self.config.batch_size {
            return Ok(None);
        }
        let batch = Batch::from_transitions(&buffer.sample(self.config.batch_size, rng))?;
        self.update_on_batch(&batch, observer).map(Some)
    }

    pub fn update_on_batch(
        &mut self,
        batch: &Batch,
        observer: &mut dyn FnMut(UpdatePhase),
    ) -> Result<UpdateStats, AgentError> {
        let c = critic_loss(
            &self.actor,
            &self.critic,
            &self.target_critic,
            batch,
            self.config.gamma,
            self.config.reward_scale,
        )?;
        self.critic_opt.step(self.critic.params_mut(), &c.grad);
        observer(UpdatePhase::Critic);

        let a = actor_descent(&self.actor, &self.critic, batch, self.config.recover_clamped)?;
        self.actor_opt.step(self.actor.params_mut(), &a.grad);
        observer(UpdatePhase::Actor);

        self.target_critic.soft_update_from(&self.critic, self.config.tau)?;
        observer(UpdatePhase::Target);
        self.updates += 1;
        Ok(UpdateStats { critic_loss: c.loss, actor_loss: a.loss })
    }
}

impl Checkpoint for Agent {
    const KIND: u32 = 2;

    fn encode(&self, enc: &mut Encoder) {
        encode_agent_config(&self.config, enc);
        self.actor.encode(enc);
        self.critic.encode(enc);
        self.target_critic.encode(enc);
        self.actor_opt.encode(enc);
        self.critic_opt.encode(enc);
        enc.u64(self.updates);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, PersistError> {
        let config = decode_agent_config(dec)?;
        let agent = Self {
            config,
            actor: Network::decode(dec)?,
            critic: Network::decode(dec)?,
            target_critic: Network::decode(dec)?,
            actor_opt: Adam::decode(dec)?,
            critic_opt: Adam::decode(dec)?,
            updates: dec.u64()?,
        };
        if !agent.critic.same_architecture(&agent.target_critic)
            || agent.actor_opt.len() != agent.actor.num_params()
            || agent.critic_opt.len() != agent.critic.num_params()
        {
            return Err(PersistError::Corrupt("agent components are inconsistent".into()));
        }
        Ok(agent)
    }
}

pub(crate) fn encode_agent_config(c: &AgentConfig, enc: &mut Encoder) {
    enc.f64(c.gamma);
    enc.u64(c.batch_size as u64);
    enc.f64(c.lr_actor);
    enc.f64(c.lr_critic);
    enc.f64(c.tau);
    enc.f64(c.exploration_noise_sigma);
    enc.u64(c.buffer_capacity as u64);
    enc.usizes(&c.hidden_layers);
    enc.f64(c.reward_scale);
    enc.u64(c.recover_clamped as u64);
}

pub(crate) fn decode_agent_config(dec: &mut Decoder<'_>) -> Result<AgentConfig, PersistError> {
    Ok(AgentConfig {
        gamma: dec.f64()?,
        batch_size: dec.u64()? as usize,
        lr_actor: dec.f64()?,
        lr_critic: dec.f64()?,
        tau: dec.f64()?,
        exploration_noise_sigma: dec.f64()?,
        buffer_capacity: dec.u64()? as usize,
        hidden_layers: dec.usizes()?,
        reward_scale: dec.f64()?,
        recover_clamped: dec.u64()? != 0,
    })
}

/// Per-episode (or per-segment) record of an interaction run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeStats {
    pub total_reward: f64,
    pub rewards: Vec<f64>,
    pub net_consumption: Vec<f64>,
    pub prices: Vec<f64>,
}

impl EpisodeStats {
    pub fn steps(&self) -> usize {
        self.rewards.len()
    }

    pub fn record(&mut self, t: &Transition) {
        self.total_reward += t.reward;
        self.rewards.push(t.reward);
        self.net_consumption.push(t.net_consumption_e);
        self.prices.push(t.price);
    }

    pub fn extend(&mut self, other: &EpisodeStats) {
        self.total_reward += other.total_reward;
        self.rewards.extend(&other.rewards);
        self.net_consumption.extend(&other.net_consumption);
        self.prices.extend(&other.prices);
    }
}

fn check_not_exhausted(env: &BuildingEnv, steps: usize) -> Result<(), AgentError> {
    if steps > 0 && env.is_done() {
        return Err(SimError::EpisodeExhausted { hour: env.hour(), length: env.episode_length() }.into());
    }
    Ok(())
}

/// Runs the current policy for up to `steps` hours without learning,
/// appending every transition to `buffer`.
pub fn rollout(
    agent: &Agent,
    env: &mut BuildingEnv,
    steps: usize,
    explore: bool,
    buffer: &mut ReplayBuffer,
    rng: &mut Rng,
) -> Result<EpisodeStats, AgentError> {
    check_not_exhausted(env, steps)?;
    let mut stats = EpisodeStats::default();
    for _ in 0..steps.min(env.remaining()) {
        let action = agent.act(&env.observation(), explore, rng)?;
        let t = env.step(action)?;
        stats.record(&t);
        buffer.push(t);
    }
    Ok(stats)
}

/// Interacts with exploration for up to `steps` hours, storing each
/// transition and taking one [`Agent::update_step`] after each.
///
/// Exploration noise and replay sampling draw from separate streams, so a
/// learner with zero step sizes acts exactly like a noisy [`rollout`].
pub fn train_online(
    agent: &mut Agent,
    env: &mut BuildingEnv,
    steps: usize,
    buffer: &mut ReplayBuffer,
    explore_rng: &mut Rng,
    replay_rng: &mut Rng,
) -> Result<EpisodeStats, AgentError> {
    check_not_exhausted(env, steps)?;
    let mut stats = EpisodeStats::default();
    for _ in 0..steps.min(env.remaining()) {
        let action = agent.act(&env.observation(), true, explore_rng)?;
        let t = env.step(action)?;
        stats.record(&t);
        buffer.push(t);
        agent.update_step(buffer, replay_rng)?;
    }
    Ok(stats)
}
