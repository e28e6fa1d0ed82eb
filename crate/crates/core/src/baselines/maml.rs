//! Episodic MAML: base learners collect a whole episode, train on it
//! offline for a few epochs, and the initialisation takes one group-level
//! step per episode.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::agent::{rollout, Agent, AgentConfig, Batch, EpisodeStats, ReplayBuffer};
use crate::meta::{
    group_adapt, sample_buildings, sample_fresh_batches, LearnerStreams, MetaConfig, MetaError, MetaState, TargetRun,
};
use crate::nn::Network;
use crate::seed::{Rng, SeedTree};
use crate::simulator::BuildingEnv;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MamlConfig {
    /// Passes over the episode's data at its end.
    pub epochs: usize,
}

impl Default for MamlConfig {
    fn default() -> Self {
        Self { epochs: 5 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MamlReport {
    pub group_updates: u64,
    pub inner_updates: u64,
    pub episodes: Vec<Vec<EpisodeStats>>,
}

/// `epochs` shuffled passes of minibatch updates over the buffer.
pub fn train_epochs(agent: &mut Agent, buffer: &ReplayBuffer, epochs: usize, rng: &mut Rng) -> Result<(), MetaError> {
    let mut order: Vec<usize> = (0..buffer.len()).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks(agent.config.batch_size) {
            let ts: Vec<_> = chunk.iter().filter_map(|&i| buffer.get(i)).collect();
            agent.update_on_batch(&Batch::from_transitions(&ts)?, &mut |_| {})?;
        }
    }
    Ok(())
}

/// Test-time counterpart: each episode is collected with exploration and
/// then trained on for `epochs` passes; memory persists across episodes.
pub fn adapt_target_episodic(
    actor: &Network,
    critic: &Network,
    template: &BuildingEnv,
    episodes: usize,
    agent_cfg: &AgentConfig,
    epochs: usize,
    mut streams: LearnerStreams,
) -> Result<TargetRun, MetaError> {
    let mut agent = Agent::from_init(agent_cfg.clone(), actor, critic)?;
    let mut env = template.clone();
    let mut buffer = ReplayBuffer::new(agent_cfg.buffer_capacity);
    let mut runs = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        env.reset();
        let len = env.episode_length();
        runs.push(rollout(&agent, &mut env, len, true, &mut buffer, &mut streams.explore)?);
        train_epochs(&mut agent, &buffer, epochs, &mut streams.replay)?;
    }
    Ok(TargetRun { agent, episodes: runs })
}

/// Meta-training with the episodic schedule; same round structure, seeds
/// and group-level step as [`crate::meta::meta_train`].
pub fn maml_episodic_train(
    meta: &mut MetaState,
    sources: &[BuildingEnv],
    cfg: &MetaConfig,
    maml: &MamlConfig,
    seed: SeedTree,
    rounds: usize,
) -> Result<MamlReport, MetaError> {
    let episode_length = sources
        .iter()
        .map(BuildingEnv::episode_length)
        .min()
        .ok_or_else(|| MetaError::Config("no source buildings".into()))?;
    cfg.validate(episode_length, sources.len())?;
    let inner_cfg = cfg.inner_agent_config(&meta.agent_config);
    let mut report = MamlReport::default();

    let start = meta.rounds_completed;
    for round in start..start + rounds {
        let picked = sample_buildings(
            sources.len(),
            cfg.building_batch_size,
            &mut seed.child(round as u64).named("batch").rng(),
        );
        let mut adapted = Vec::with_capacity(picked.len());
        let mut buffers = Vec::with_capacity(picked.len());
        let mut streams = Vec::with_capacity(picked.len());
        let mut episodes = Vec::with_capacity(picked.len());
        for (slot, &i) in picked.iter().enumerate() {
            let mut s = LearnerStreams::for_round(seed, round, slot);
            let mut env = sources[i].clone();
            env.reset();
            let mut agent = meta.spawn_agent(&inner_cfg)?;
            let mut buffer = ReplayBuffer::new(inner_cfg.buffer_capacity.max(episode_length));
            episodes.push(rollout(&agent, &mut env, episode_length, true, &mut buffer, &mut s.explore)?);
            train_epochs(&mut agent, &buffer, maml.epochs, &mut s.replay)?;
            report.inner_updates += agent.updates;
            adapted.push(agent);
            buffers.push(buffer);
            streams.push(s);
        }
        let fresh = sample_fresh_batches(&buffers, inner_cfg.batch_size, cfg.meta_batches, &mut streams)?;
        group_adapt(meta, &adapted, &fresh)?;
        report.group_updates += 1;
        meta.rounds_completed = round + 1;
        report.episodes.push(episodes);
    }
    Ok(report)
}
