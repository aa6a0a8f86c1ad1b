use ndarray::Array2;

use super::state::{Action, AgentState};
use crate::channel::{check_matrices, db_to_linear, EnvState, LinkModel, TransitionMatrix};
use crate::error::{invalid, Error, Result};
use crate::rng::{domain, substream};
use crate::spectrum::{collision_indicator, validate_assignment, Assignment};

/// Throughput of each `(uav, channel)` link relative to the best link:
/// `log2(1 + SINR) / log2(1 + SINR_max)`.
pub fn normalized_weights(link: &LinkModel) -> Result<Array2<f64>> {
    let k = link.num_uavs();
    let m = link.num_channels();
    link.validate(k, m)?;
    let mut w = Array2::zeros((k, m));
    for uav in 0..k {
        for ch in 0..m {
            w[[uav, ch]] = (1.0 + db_to_linear(link.sinr_for(uav, ch)?)).log2();
        }
    }
    let max = w.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        w /= max;
    }
    Ok(w)
}

/// Result of one allocation decision.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Reward credited to each chosen action, in order.
    pub rewards: Vec<f64>,
    /// The action actually carried out; choices of channels not known to
    /// be vacant run as idle.
    pub executed: Vec<Action>,
    pub assignment: Assignment,
    pub collisions: usize,
    pub next_state: AgentState,
}

impl StepOutcome {
    pub fn utility(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// Allocation environment with perfect sensing: the agent's state is the
/// true occupancy of the previous slot. Rewards are the collision
/// indicator times the normalized link throughput.
#[derive(Debug, Clone)]
pub struct SchedulingEnv {
    matrices: Vec<TransitionMatrix>,
    weights: Array2<f64>,
    env: EnvState,
    state: AgentState,
}

impl SchedulingEnv {
    /// `weights` is `uavs × channels`.
    pub fn new(matrices: Vec<TransitionMatrix>, weights: Array2<f64>) -> Result<Self> {
        let m = weights.ncols();
        if m == 0 || weights.nrows() == 0 {
            return Err(invalid("weights", "need at least one UAV and one channel"));
        }
        check_matrices(&matrices, m)?;
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(invalid("weights", "must be finite"));
        }
        let env = EnvState::from_stationary(&matrices, 0)?;
        Ok(Self {
            matrices,
            weights,
            env,
            state: AgentState::Initial,
        })
    }

    pub fn from_link_model(matrices: Vec<TransitionMatrix>, link: &LinkModel) -> Result<Self> {
        Self::new(matrices, normalized_weights(link)?)
    }

    pub fn num_channels(&self) -> usize {
        self.weights.ncols()
    }

    pub fn num_uavs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn matrices(&self) -> &[TransitionMatrix] {
        &self.matrices
    }

    pub fn state(&self) -> &AgentState {
        &self.state
    }

    /// Starts an episode: occupancy drawn from the stationary law, agent
    /// state `Initial`.
    pub fn reset(&mut self, seed: u64, episode: u64) -> Result<()> {
        let mut rng = substream(seed, domain::ENVIRONMENT, episode);
        self.env = EnvState::from_stationary(&self.matrices, rand::Rng::random(&mut rng))?;
        self.state = AgentState::Initial;
        Ok(())
    }

    /// Applies `actions[i]` for UAV `i`, advances the chains one slot and
    /// returns the rewards realized in the new slot.
    pub fn step(&mut self, actions: &[Action]) -> Result<StepOutcome> {
        let m = self.num_channels();
        if actions.len() > self.num_uavs() {
            return Err(Error::DimensionMismatch {
                context: "actions per slot",
                expected: self.num_uavs(),
                actual: actions.len(),
            });
        }
        let mut executed = Vec::with_capacity(actions.len());
        let mut assignment = Assignment::empty();
        for (uav, &a) in actions.iter().enumerate() {
            Action::new(a.value(), m)?;
            match a.channel() {
                Some(ch) if self.state.is_vacant(ch) => {
                    assignment.push(uav, ch);
                    executed.push(a);
                }
                _ => executed.push(Action::IDLE),
            }
        }
        if let AgentState::Fused(f) = &self.state {
            validate_assignment(&assignment, f).map_err(Error::ConstraintViolation)?;
        }

        self.env.advance(&self.matrices)?;
        let now = &self.env.true_occupancy;
        let mut rewards = Vec::with_capacity(actions.len());
        let mut collisions = 0;
        for (uav, a) in executed.iter().enumerate() {
            let r = match a.channel() {
                Some(ch) => {
                    let c = collision_indicator(now.bit(ch), 0);
                    if c < 0 {
                        collisions += 1;
                    }
                    f64::from(c) * self.weights[[uav, ch]]
                }
                None => 0.0,
            };
            rewards.push(r);
        }
        self.state = AgentState::Fused(now.clone());
        Ok(StepOutcome {
            rewards,
            executed,
            assignment,
            collisions,
            next_state: self.state.clone(),
        })
    }
}
