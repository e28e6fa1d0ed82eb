//! Reference controllers: no control, hour-of-day rules, training from a
//! random or pretrained initialisation, episodic MAML and a learned-model
//! MPC.

mod maml;
mod mpc;
mod rbc;

pub use maml::{adapt_target_episodic, maml_episodic_train, train_epochs, MamlConfig, MamlReport};
pub use mpc::{
    dynamics_loss, fit_dynamics_model, plan_with_candidates, rl_mpc_plan, run_rl_mpc, transition_matrices,
    DynamicsModel, Normalizer, Plan, RlMpcConfig, MODEL_INPUT_DIM, MODEL_OUTPUT_DIM,
};
pub use rbc::{no_control_policy, rbc_policy, thermostat_command, RbcRuleTable, RBC_CSV_HEADER};

use rand::Rng as _;
use thiserror::Error;

use crate::agent::{AgentError, EpisodeStats};
use crate::nn::NnError;
use crate::seed::Rng;
use crate::simulator::{Action, BuildingEnv, SimError};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("checkpoint pool is empty")]
    EmptyPool,
    #[error("no training data")]
    EmptyData,
    #[error("invalid rule table: {0}")]
    InvalidTable(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// An independent copy of a uniformly chosen pool member.
pub fn pretrained_init<T: Clone>(pool: &[T], rng: &mut Rng) -> Result<T, BaselineError> {
    if pool.is_empty() {
        return Err(BaselineError::EmptyPool);
    }
    Ok(pool[rng.random_range(0..pool.len())].clone())
}

/// Runs a fixed policy from the environment's current hour to the end of
/// its trace.
pub fn run_policy(
    env: &mut BuildingEnv,
    mut policy: impl FnMut(&BuildingEnv) -> Action,
) -> Result<EpisodeStats, BaselineError> {
    let mut stats = EpisodeStats::default();
    while !env.is_done() {
        let a = policy(env);
        stats.record(&env.step(a)?);
    }
    Ok(stats)
}

/// One full episode of the no-control baseline.
pub fn run_no_control(env: &mut BuildingEnv) -> Result<EpisodeStats, BaselineError> {
    env.reset();
    run_policy(env, |e| no_control_policy(e.state(), e.config()))
}

/// One full episode of the rule-based controller.
pub fn run_rbc(env: &mut BuildingEnv, table: &RbcRuleTable) -> Result<EpisodeStats, BaselineError> {
    env.reset();
    run_policy(env, |e| rbc_policy(e.hour() % 24, table, e.state().indoor_temp_c, e.config()))
}
