//! Meta-reinforcement learning for building energy management.
//!
//! The crate is organised bottom-up:
//!
//! * [`simulator`]: an hourly building environment with a battery (ESU), an
//!   HVAC unit on a first-order thermal model, solar generation and a
//!   time-of-use tariff.
//! * [`nn`]: dense networks with exact reverse-mode gradients and Adam.
//! * [`agent`]: the actor-critic base learner with replay memory and a
//!   soft-updated target critic.
//! * [`meta`]: group-shared initialisations, interleaved building-level and
//!   group-level adaptation, and adaptation on unseen buildings.
//! * [`baselines`]: no-control, rule-based control, pretrained initialisation,
//!   episodic MAML and a learned-model random-shooting MPC.
//! * [`metrics`]: ramping, load factor, peaks, net consumption and cost, all
//!   normalisable against the rule-based controller.
//! * [`harness`]: config-driven experiments, checkpoints and CSV reports.

pub mod agent;
pub mod baselines;
pub mod harness;
pub mod meta;
pub mod metrics;
pub mod nn;
pub mod persist;
pub mod seed;
pub mod simulator;

pub use agent::{Agent, AgentConfig, AgentError, EpisodeStats, ReplayBuffer};
pub use meta::{MetaConfig, MetaError, MetaState};
pub use metrics::{MetricError, ScoreReport};
pub use nn::{Adam, Network, NnError, OutputActivation};
pub use simulator::{
    Action, BuildingConfig, BuildingEnv, RewardConfig, SimError, TraceRow, Transition,
};

#[cfg(test)]
pub(crate) mod testutil;
