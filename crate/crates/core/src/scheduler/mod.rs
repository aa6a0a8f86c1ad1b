//! Channel allocation over the fused-occupancy MDP.

mod checkpoint;
mod dqn;
mod env;
mod oracle;
mod replay;
mod state;
mod tabular;
mod train;

pub use checkpoint::{read_agent, write_agent};
pub use dqn::{ddqn_targets, soft_update, DqnAgent, DqnParams, DqnVariant};
pub use env::{normalized_weights, SchedulingEnv, StepOutcome};
pub use oracle::{
    episode_utility, expected_reward_table, stationary_state_distribution, value_iteration, OracleSolution,
    MAX_ORACLE_CHANNELS,
};
pub use replay::{Experience, ReplayBuffer};
pub use state::{argmax, epsilon_greedy, epsilon_greedy_k, space_sizes, top_k_actions, Action, AgentState};
pub use tabular::{q_update, LearningRate, QTable, MAX_TABULAR_CHANNELS};
pub use train::{csv_error, evaluate_greedy, train_agent, Agent, EpsilonSchedule, TrainConfig, TrainingLog, TrainingLogRow};

