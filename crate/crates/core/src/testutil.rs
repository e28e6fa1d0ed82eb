use crate::agent::AgentConfig;
use crate::seed::SeedTree;
use crate::simulator::{generate_trace, BuildingConfig, BuildingEnv, RewardConfig, ZoneTable};

/// A narrow learner that trains fast in tests.
pub fn small_agent_config() -> AgentConfig {
    AgentConfig { batch_size: 16, buffer_capacity: 10_000, hidden_layers: vec![8, 8], ..AgentConfig::default() }
}

pub fn env(zone: u8, length: usize, seed: u64) -> BuildingEnv {
    let table = ZoneTable::builtin();
    let mut rng = SeedTree::new(seed).rng();
    let trace = generate_trace(table.zone(zone).unwrap(), length, 1.0, 1.0, &mut rng).unwrap();
    BuildingEnv::new(BuildingConfig::default(), RewardConfig::default(), trace).unwrap()
}
