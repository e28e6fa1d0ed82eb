//! Group-shared initialisation and its interleaved training schedule.
//!
//! One meta-training round walks a sampled batch of source buildings through
//! a full episode, split into intervals of `t_theta` hours. At the start of
//! every interval each building's learner is reset to the shared
//! initialisation (actor `phi0`, critic `theta0`) and adapts step by step on
//! its own replay memory (building-level adaptation). At the end of the
//! interval a fresh batch is drawn from every building's memory, the loss
//! gradients at the adapted parameters are summed over buildings, and the
//! shared initialisation takes one Adam step (group-level adaptation, first
//! order).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    actor_descent, critic_loss, decode_agent_config, encode_agent_config, train_online, Agent, AgentConfig,
    AgentError, Batch, EpisodeStats, ReplayBuffer,
};
use crate::nn::{Adam, AdamConfig, Network};
use crate::persist::{Checkpoint, Decoder, Encoder, PersistError};
use crate::seed::{Rng, SeedTree};
use crate::simulator::BuildingEnv;

#[derive(Debug, Error)]
pub enum MetaError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("empty batch: building {0} has no experience to sample")]
    EmptyBatch(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaConfig {
    /// Hours between group-level updates.
    pub t_theta: usize,
    /// Outer rounds; `None` picks enough rounds for about two episodes per
    /// source building.
    pub rounds: Option<usize>,
    /// Buildings sampled per round.
    pub building_batch_size: usize,
    /// Building-level (inner) step sizes.
    pub alpha_theta: f64,
    pub alpha_phi: f64,
    /// Group-level (meta) step sizes.
    pub beta_theta: f64,
    pub beta_phi: f64,
    /// Batches drawn from each building's memory per group-level update.
    pub meta_batches: usize,
    /// Start every round with empty replay memories. When off, each source
    /// building keeps its memory across the rounds of one `meta_train` call.
    pub reset_buffers_each_round: bool,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            t_theta: 20,
            rounds: None,
            building_batch_size: 3,
            alpha_theta: 1e-3,
            alpha_phi: 1e-3,
            beta_theta: 1e-3,
            beta_phi: 1e-3,
            meta_batches: 1,
            reset_buffers_each_round: true,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self, episode_length: usize, n_sources: usize) -> Result<(), MetaError> {
        if self.t_theta == 0 || self.t_theta > episode_length {
            return Err(MetaError::Config(format!(
                "t_theta must lie in [1, {episode_length}], got {}",
                self.t_theta
            )));
        }
        if self.building_batch_size == 0 {
            return Err(MetaError::Config("building_batch_size must be >= 1".into()));
        }
        if self.building_batch_size > n_sources {
            return Err(MetaError::Config(format!(
                "building batch of {} exceeds the {n_sources} source buildings",
                self.building_batch_size
            )));
        }
        if self.meta_batches == 0 {
            return Err(MetaError::Config("meta_batches must be >= 1".into()));
        }
        if [self.alpha_theta, self.alpha_phi, self.beta_theta, self.beta_phi].iter().any(|v| !(*v >= 0.0)) {
            return Err(MetaError::Config("step sizes must be >= 0".into()));
        }
        Ok(())
    }

    pub fn resolved_rounds(&self, n_sources: usize) -> usize {
        self.rounds
            .unwrap_or_else(|| (2 * n_sources).div_ceil(self.building_batch_size.max(1)))
    }

    /// Group-level updates in one round over an episode of `episode_length` hours.
    pub fn updates_per_round(&self, episode_length: usize) -> usize {
        episode_length.div_ceil(self.t_theta)
    }

    /// The agent configuration used for building-level adaptation.
    pub fn inner_agent_config(&self, agent_cfg: &AgentConfig) -> AgentConfig {
        AgentConfig { lr_actor: self.alpha_phi, lr_critic: self.alpha_theta, ..agent_cfg.clone() }
    }
}

/// The meta-learner: shared initialisations and their optimizers.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaState {
    pub agent_config: AgentConfig,
    /// `phi0`.
    pub actor: Network,
    /// `theta0`.
    pub critic: Network,
    pub opt_theta: Adam,
    pub opt_phi: Adam,
    pub rounds_completed: usize,
    pub group_updates: u64,
}

impl MetaState {
    /// Uniformly initialised shared parameters, drawn exactly as
    /// [`Agent::new`] would draw them.
    pub fn random(agent_cfg: &AgentConfig, beta_theta: f64, beta_phi: f64, rng: &mut Rng) -> Result<Self, MetaError> {
        let agent = Agent::new(agent_cfg.clone(), rng)?;
        Ok(Self::from_networks(agent_cfg, agent.actor, agent.critic, beta_theta, beta_phi))
    }

    pub fn from_networks(
        agent_cfg: &AgentConfig,
        actor: Network,
        critic: Network,
        beta_theta: f64,
        beta_phi: f64,
    ) -> Self {
        Self {
            agent_config: agent_cfg.clone(),
            opt_theta: Adam::new(critic.num_params(), AdamConfig::with_lr(beta_theta)),
            opt_phi: Adam::new(actor.num_params(), AdamConfig::with_lr(beta_phi)),
            actor,
            critic,
            rounds_completed: 0,
            group_updates: 0,
        }
    }

    /// A learner inheriting the shared initialisation.
    pub fn spawn_agent(&self, cfg: &AgentConfig) -> Result<Agent, MetaError> {
        Ok(Agent::from_init(cfg.clone(), &self.actor, &self.critic)?)
    }
}

impl Checkpoint for MetaState {
    const KIND: u32 = 3;

    fn encode(&self, enc: &mut Encoder) {
        encode_agent_config(&self.agent_config, enc);
        self.actor.encode(enc);
        self.critic.encode(enc);
        self.opt_theta.encode(enc);
        self.opt_phi.encode(enc);
        enc.u64(self.rounds_completed as u64);
        enc.u64(self.group_updates);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, PersistError> {
        let state = Self {
            agent_config: decode_agent_config(dec)?,
            actor: Network::decode(dec)?,
            critic: Network::decode(dec)?,
            opt_theta: Adam::decode(dec)?,
            opt_phi: Adam::decode(dec)?,
            rounds_completed: dec.u64()? as usize,
            group_updates: dec.u64()?,
        };
        if state.opt_theta.len() != state.critic.num_params() || state.opt_phi.len() != state.actor.num_params() {
            return Err(PersistError::Corrupt("meta optimizer sizes do not match networks".into()));
        }
        Ok(state)
    }
}

/// Random streams of one building learner: exploration noise and replay sampling.
#[derive(Debug, Clone)]
pub struct LearnerStreams {
    pub explore: Rng,
    pub replay: Rng,
}

impl LearnerStreams {
    pub fn from_tree(tree: SeedTree) -> Self {
        Self { explore: tree.named("explore").rng(), replay: tree.named("replay").rng() }
    }

    /// Streams of batch slot `slot` in meta-training round `round`.
    pub fn for_round(seed: SeedTree, round: usize, slot: usize) -> Self {
        Self::from_tree(seed.child(round as u64).named("building").child(slot as u64))
    }
}

/// Building-level adaptation over one interval: inherit the shared
/// initialisation, then act, store and update once per hour.
pub fn building_adapt(
    meta: &MetaState,
    env: &mut BuildingEnv,
    interval: usize,
    buffer: &mut ReplayBuffer,
    inner_cfg: &AgentConfig,
    streams: &mut LearnerStreams,
) -> Result<(Agent, EpisodeStats), MetaError> {
    let mut agent = meta.spawn_agent(inner_cfg)?;
    if interval == 0 {
        return Ok((agent, EpisodeStats::default()));
    }
    let stats = train_online(&mut agent, env, interval, buffer, &mut streams.explore, &mut streams.replay)?;
    Ok((agent, stats))
}

/// Summed first-order meta-gradient over buildings.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaGradient {
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    /// Mean critic and actor loss per building on its fresh batches.
    pub building_losses: Vec<(f64, f64)>,
}

impl MetaGradient {
    pub fn norms(&self) -> (f64, f64) {
        let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        (n(&self.theta), n(&self.phi))
    }
}

/// Loss gradients evaluated at each building's adapted parameters on its
/// fresh batches, summed over buildings in index order.
pub fn meta_gradient(adapted: &[Agent], fresh: &[Vec<Batch>]) -> Result<MetaGradient, MetaError> {
    let first = adapted.first().ok_or(MetaError::EmptyBatch(0))?;
    let mut theta = vec![0.0; first.critic.num_params()];
    let mut phi = vec![0.0; first.actor.num_params()];
    let mut building_losses = Vec::with_capacity(adapted.len());
    for (i, (agent, batches)) in adapted.iter().zip(fresh).enumerate() {
        if batches.is_empty() || batches.iter().any(Batch::is_empty) {
            return Err(MetaError::EmptyBatch(i));
        }
        let (mut lc, mut la) = (0.0, 0.0);
        for batch in batches {
            let c = critic_loss(&agent.actor, &agent.critic, &agent.target_critic, batch, agent.config.gamma, agent.config.reward_scale)?;
            let a = actor_descent(&agent.actor, &agent.critic, batch, agent.config.recover_clamped)?;
            theta.iter_mut().zip(&c.grad).for_each(|(t, g)| *t += g);
            phi.iter_mut().zip(&a.grad).for_each(|(t, g)| *t += g);
            lc += c.loss;
            la += a.loss;
        }
        let k = batches.len() as f64;
        building_losses.push((lc / k, la / k));
    }
    Ok(MetaGradient { theta, phi, building_losses })
}

/// Draws `meta_batches` fresh batches from each building's memory.
pub fn sample_fresh_batches(
    buffers: &[ReplayBuffer],
    batch_size: usize,
    meta_batches: usize,
    rngs: &mut [LearnerStreams],
) -> Result<Vec<Vec<Batch>>, MetaError> {
    buffers
        .iter()
        .zip(rngs.iter_mut())
        .enumerate()
        .map(|(i, (buf, rng))| {
            if buf.is_empty() {
                return Err(MetaError::EmptyBatch(i));
            }
            (0..meta_batches)
                .map(|_| Batch::from_transitions(&buf.sample(batch_size, &mut rng.replay)).map_err(MetaError::from))
                .collect()
        })
        .collect()
}

/// Group-level adaptation: one Adam step of the shared initialisation along
/// the summed meta-gradient.
pub fn group_adapt(meta: &mut MetaState, adapted: &[Agent], fresh: &[Vec<Batch>]) -> Result<MetaGradient, MetaError> {
    let g = meta_gradient(adapted, fresh)?;
    meta.opt_theta.step(meta.critic.params_mut(), &g.theta);
    meta.opt_phi.step(meta.actor.params_mut(), &g.phi);
    meta.group_updates += 1;
    Ok(g)
}

/// One row of the meta-training log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaLogRow {
    pub round: usize,
    pub interval: usize,
    pub building: usize,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub meta_grad_norm_theta: f64,
    pub meta_grad_norm_phi: f64,
}

pub const META_LOG_HEADER: [&str; 7] = [
    "round",
    "interval",
    "building",
    "critic_loss",
    "actor_loss",
    "meta_grad_norm_theta",
    "meta_grad_norm_phi",
];

#[derive(Debug, Clone, Default)]
pub struct MetaTrainReport {
    pub log: Vec<MetaLogRow>,
    pub group_updates: u64,
    pub inner_updates: u64,
    /// Source-building indices sampled in each round.
    pub batches: Vec<Vec<usize>>,
    /// Interaction record per round and batch slot.
    pub episodes: Vec<Vec<EpisodeStats>>,
    /// Learners as adapted in the last interval, before the final group-level update.
    pub last_adapted: Vec<Agent>,
}

/// Samples `k` distinct indices out of `n`, in draw order.
pub fn sample_buildings(n: usize, k: usize, rng: &mut Rng) -> Vec<usize> {
    rand::seq::index::sample(rng, n, k).into_vec()
}

/// Runs `rounds` further rounds of meta-training, continuing from
/// `meta.rounds_completed`.
///
/// Every round's randomness derives from `(seed, round index)`, so training
/// split across checkpoints follows the same trajectory as uninterrupted
/// training (with per-round buffer resets; kept memories are not
/// checkpointed).
pub fn meta_train(
    meta: &mut MetaState,
    sources: &[BuildingEnv],
    cfg: &MetaConfig,
    seed: SeedTree,
    rounds: usize,
) -> Result<MetaTrainReport, MetaError> {
    let episode_length = sources
        .iter()
        .map(BuildingEnv::episode_length)
        .min()
        .ok_or_else(|| MetaError::Config("no source buildings".into()))?;
    cfg.validate(episode_length, sources.len())?;
    let inner_cfg = cfg.inner_agent_config(&meta.agent_config);
    let mut report = MetaTrainReport::default();
    let mut kept: Vec<Option<ReplayBuffer>> = vec![None; sources.len()];

    let start = meta.rounds_completed;
    for round in start..start + rounds {
        let round_seed = seed.child(round as u64);
        let picked = sample_buildings(sources.len(), cfg.building_batch_size, &mut round_seed.named("batch").rng());
        let mut envs: Vec<BuildingEnv> = picked
            .iter()
            .map(|&i| {
                let mut e = sources[i].clone();
                e.reset();
                e
            })
            .collect();
        let mut buffers: Vec<ReplayBuffer> = picked
            .iter()
            .map(|&i| kept[i].take().unwrap_or_else(|| ReplayBuffer::new(inner_cfg.buffer_capacity)))
            .collect();
        let mut streams: Vec<LearnerStreams> =
            (0..picked.len()).map(|slot| LearnerStreams::for_round(seed, round, slot)).collect();
        let mut episodes = vec![EpisodeStats::default(); picked.len()];

        let mut interval = 0;
        let mut t = 0;
        while t < episode_length {
            let len = cfg.t_theta.min(episode_length - t);
            let mut adapted = Vec::with_capacity(picked.len());
            for slot in 0..picked.len() {
                let (agent, stats) =
                    building_adapt(meta, &mut envs[slot], len, &mut buffers[slot], &inner_cfg, &mut streams[slot])?;
                report.inner_updates += agent.updates;
                episodes[slot].extend(&stats);
                adapted.push(agent);
            }
            let fresh = sample_fresh_batches(&buffers, inner_cfg.batch_size, cfg.meta_batches, &mut streams)?;
            let g = group_adapt(meta, &adapted, &fresh)?;
            report.group_updates += 1;
            let (n_theta, n_phi) = g.norms();
            for (slot, (lc, la)) in g.building_losses.iter().enumerate() {
                report.log.push(MetaLogRow {
                    round,
                    interval,
                    building: picked[slot],
                    critic_loss: *lc,
                    actor_loss: *la,
                    meta_grad_norm_theta: n_theta,
                    meta_grad_norm_phi: n_phi,
                });
            }
            t += len;
            interval += 1;
            report.last_adapted = adapted;
        }
        if !cfg.reset_buffers_each_round {
            for (&i, buf) in picked.iter().zip(buffers) {
                kept[i] = Some(buf);
            }
        }
        meta.rounds_completed = round + 1;
        report.batches.push(picked);
        report.episodes.push(episodes);
    }
    Ok(report)
}

/// Adaptation of one target building across consecutive episodes.
#[derive(Debug, Clone)]
pub struct TargetRun {
    pub agent: Agent,
    pub episodes: Vec<EpisodeStats>,
}

/// Trains a learner started from `(actor, critic)` online for `episodes`
/// passes over the target's trace; the replay memory persists across
/// episodes.
pub fn adapt_target(
    actor: &Network,
    critic: &Network,
    template: &BuildingEnv,
    episodes: usize,
    agent_cfg: &AgentConfig,
    mut streams: LearnerStreams,
) -> Result<TargetRun, MetaError> {
    let mut agent = Agent::from_init(agent_cfg.clone(), actor, critic)?;
    let mut env = template.clone();
    let mut buffer = ReplayBuffer::new(agent_cfg.buffer_capacity);
    let mut runs = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        env.reset();
        let len = env.episode_length();
        runs.push(train_online(&mut agent, &mut env, len, &mut buffer, &mut streams.explore, &mut streams.replay)?);
    }
    Ok(TargetRun { agent, episodes: runs })
}

/// [`adapt_target`] on every target; target `i` draws from `seed.child(i)`.
pub fn adapt_on_targets(
    actor: &Network,
    critic: &Network,
    targets: &[BuildingEnv],
    episodes: usize,
    agent_cfg: &AgentConfig,
    seed: SeedTree,
) -> Result<Vec<TargetRun>, MetaError> {
    targets
        .iter()
        .enumerate()
        .map(|(i, t)| {
            adapt_target(actor, critic, t, episodes, agent_cfg, LearnerStreams::from_tree(seed.child(i as u64)))
        })
        .collect()
}

/// Meta-testing: adapt the learned initialisation on each unseen target with
/// per-step updates and no group-level updates.
pub fn meta_test(
    meta: &MetaState,
    targets: &[BuildingEnv],
    episodes: usize,
    agent_cfg: &AgentConfig,
    seed: SeedTree,
) -> Result<Vec<TargetRun>, MetaError> {
    adapt_on_targets(&meta.actor, &meta.critic, targets, episodes, agent_cfg, seed)
}
