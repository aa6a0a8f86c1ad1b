use std::io::Write;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dqn::DqnAgent;
use super::env::SchedulingEnv;
use super::replay::Experience;
use super::state::{epsilon_greedy_k, Action, AgentState};
use super::tabular::QTable;
use crate::error::{invalid, Error, Result};
use crate::rng::{domain, substream};

/// A learner that scores every action of a state.
#[derive(Debug, Clone)]
pub enum Agent {
    Tabular(QTable),
    Dqn(DqnAgent),
}

impl Agent {
    pub fn num_channels(&self) -> usize {
        match self {
            Agent::Tabular(t) => t.num_channels(),
            Agent::Dqn(d) => d.num_channels(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Agent::Tabular(_) => "qtable",
            Agent::Dqn(d) => d.params().variant.name(),
        }
    }

    pub fn q_values(&self, state: &AgentState) -> Result<Vec<f64>> {
        match self {
            Agent::Tabular(t) => t.q_values(state),
            Agent::Dqn(d) => d.q_values(state),
        }
    }

    /// Greedy allocation for `k` UAVs.
    pub fn allocate(&self, state: &AgentState, k: usize) -> Result<Vec<Action>> {
        super::state::top_k_actions(&self.q_values(state)?, k)
    }

    fn observe<R: Rng + ?Sized>(&mut self, experience: Experience, rng: &mut R) -> Result<()> {
        match self {
            Agent::Tabular(t) => {
                t.update(&experience.state, experience.action, experience.reward, &experience.next_state)?;
            }
            Agent::Dqn(d) => {
                d.remember(experience)?;
                d.learn(rng)?;
            }
        }
        Ok(())
    }
}

/// Exponential decay from `start` to `min` over the first
/// `decay_fraction` of the episodes, then flat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub min: f64,
    pub decay_fraction: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            min: 0.05,
            decay_fraction: 0.6,
        }
    }
}

impl EpsilonSchedule {
    pub fn constant(epsilon: f64) -> Self {
        Self {
            start: epsilon,
            min: epsilon,
            decay_fraction: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.start) || !(0.0..=1.0).contains(&self.min) || self.min > self.start {
            return Err(invalid("epsilon", "need 0 <= min <= start <= 1"));
        }
        if !(self.decay_fraction > 0.0 && self.decay_fraction <= 1.0) {
            return Err(invalid("decay_fraction", "must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn value(&self, episode: usize, episodes: usize) -> f64 {
        if self.start == self.min {
            return self.start;
        }
        let horizon = (self.decay_fraction * episodes as f64).max(1.0);
        let x = (episode as f64 / horizon).min(1.0);
        if self.min == 0.0 {
            return if x >= 1.0 { 0.0 } else { self.start * (1.0 - x) };
        }
        (self.start * (self.min / self.start).powf(x)).max(self.min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub episodes: usize,
    pub slots_per_episode: usize,
    /// Channels allocated per slot (UAVs requesting every slot).
    pub allocations: usize,
    pub epsilon: EpsilonSchedule,
    pub seed: u64,
    /// Fill `wall_ms` with measured time; otherwise it is 0 so logs stay
    /// reproducible byte for byte.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 300,
            slots_per_episode: 100,
            allocations: 1,
            epsilon: EpsilonSchedule::default(),
            seed: 0,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 || self.slots_per_episode == 0 {
            return Err(invalid("episodes", "episodes and slots_per_episode must be >= 1"));
        }
        if self.allocations == 0 {
            return Err(invalid("allocations", "must be >= 1"));
        }
        self.epsilon.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLogRow {
    pub episode: usize,
    pub cumulative_utility: f64,
    pub collisions: usize,
    pub epsilon: f64,
    pub mean_q: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<TrainingLogRow>,
}

impl TrainingLog {
    /// Mean cumulative utility of the last `n` episodes.
    pub fn tail_mean_utility(&self, n: usize) -> f64 {
        let n = n.min(self.rows.len()).max(1);
        self.rows[self.rows.len().saturating_sub(n)..]
            .iter()
            .map(|r| r.cumulative_utility)
            .sum::<f64>()
            / n as f64
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.rows {
            out.serialize(row).map_err(csv_error)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format {
            what: "csv",
            reason: format!("{other:?}"),
        },
    }
}

/// Runs ε-greedy episodes, feeding one experience per allocated UAV to
/// the agent after every slot.
pub fn train_agent(agent: &mut Agent, env: &mut SchedulingEnv, config: &TrainConfig) -> Result<TrainingLog> {
    config.validate()?;
    if agent.num_channels() != env.num_channels() {
        return Err(Error::DimensionMismatch {
            context: "agent channels",
            expected: env.num_channels(),
            actual: agent.num_channels(),
        });
    }
    let k = config.allocations;
    if k > env.num_uavs() || k > env.num_channels() + 1 {
        return Err(invalid("allocations", "exceeds UAVs in the environment or the action count"));
    }
    let mut replay_rng = substream(config.seed, domain::REPLAY, 0);
    let mut log = TrainingLog::default();
    for episode in 0..config.episodes {
        let start = Instant::now();
        let epsilon = config.epsilon.value(episode, config.episodes);
        let mut policy_rng = substream(config.seed, domain::POLICY, episode as u64);
        env.reset(config.seed, episode as u64)?;
        let (mut utility, mut collisions, mut q_sum) = (0.0, 0usize, 0.0);
        for _ in 0..config.slots_per_episode {
            let state = env.state().clone();
            let q = agent.q_values(&state)?;
            q_sum += q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let actions = epsilon_greedy_k(&q, k, epsilon, &mut policy_rng)?;
            let out = env.step(&actions)?;
            utility += out.utility();
            collisions += out.collisions;
            for (a, r) in actions.iter().zip(&out.rewards) {
                agent.observe(
                    Experience {
                        state: state.clone(),
                        action: *a,
                        reward: *r,
                        next_state: out.next_state.clone(),
                    },
                    &mut replay_rng,
                )?;
            }
        }
        let wall_ms = if config.record_wall_time {
            start.elapsed().as_millis() as u64
        } else {
            0
        };
        log.rows.push(TrainingLogRow {
            episode,
            cumulative_utility: utility,
            collisions,
            epsilon,
            mean_q: q_sum / config.slots_per_episode as f64,
            wall_ms,
        });
        log::debug!("{} episode {episode}: utility {utility:.3}, eps {epsilon:.3}", agent.name());
    }
    Ok(log)
}

/// Mean per-episode utility of the greedy policy on fresh episodes.
pub fn evaluate_greedy(
    agent: &Agent,
    env: &mut SchedulingEnv,
    episodes: usize,
    slots_per_episode: usize,
    allocations: usize,
    seed: u64,
) -> Result<f64> {
    if episodes == 0 {
        return Err(invalid("episodes", "must be >= 1"));
    }
    let mut total = 0.0;
    for episode in 0..episodes {
        env.reset(seed, episode as u64)?;
        for _ in 0..slots_per_episode {
            let actions = agent.allocate(env.state(), allocations)?;
            total += env.step(&actions)?.utility();
        }
    }
    Ok(total / episodes as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::TransitionMatrix;
    use crate::scheduler::dqn::{DqnParams, DqnVariant};
    use crate::scheduler::tabular::LearningRate;
    use crate::spectrum::OccupancyVector;
    use ndarray::array;

    #[test]
    fn epsilon_schedule_shape() {
        let s = EpsilonSchedule::default();
        assert_eq!(s.value(0, 100), 1.0);
        assert!((s.value(60, 100) - 0.05).abs() < 1e-12);
        assert_eq!(s.value(99, 100), 0.05);
        let mut prev = 1.0;
        for e in 0..100 {
            let v = s.value(e, 100);
            assert!(v <= prev && v >= 0.05);
            prev = v;
        }
        assert_eq!(EpsilonSchedule::constant(1.0).value(50, 100), 1.0);
        assert!(EpsilonSchedule { start: 0.1, min: 0.5, decay_fraction: 0.5 }.validate().is_err());
    }

    #[test]
    fn myopic_agent_learns_free_channel() {
        let mats = vec![TransitionMatrix::new(0.0, 1.0).unwrap()];
        let mut env = SchedulingEnv::new(mats, array![[1.0]]).unwrap();
        let params = DqnParams {
            gamma: 0.0,
            variant: DqnVariant::DdqnSoft,
            ..DqnParams::default()
        };
        let mut agent = Agent::Dqn(DqnAgent::new(1, params, 0).unwrap());
        let cfg = TrainConfig {
            episodes: 20,
            slots_per_episode: 50,
            ..TrainConfig::default()
        };
        train_agent(&mut agent, &mut env, &cfg).unwrap();
        let vacant = AgentState::Fused(OccupancyVector::vacant(1));
        assert_eq!(agent.allocate(&vacant, 1).unwrap(), vec![Action::transmit(0)]);
    }

    #[test]
    fn same_seed_same_log() {
        let mats = vec![TransitionMatrix::default(); 3];
        let w = array![[1.0, 0.8, 0.5]];
        let run = || {
            let mut env = SchedulingEnv::new(mats.clone(), w.clone()).unwrap();
            let mut agent = Agent::Dqn(DqnAgent::new(3, DqnParams::default(), 4).unwrap());
            let cfg = TrainConfig {
                episodes: 5,
                slots_per_episode: 40,
                seed: 4,
                ..TrainConfig::default()
            };
            let log = train_agent(&mut agent, &mut env, &cfg).unwrap();
            let mut buf = Vec::new();
            log.write_csv(&mut buf).unwrap();
            buf
        };
        let a = run();
        assert_eq!(a, run());
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("episode,cumulative_utility,collisions,epsilon,mean_q,wall_ms\n"));
    }

    #[test]
    fn tabular_agent_trains() {
        let mats = vec![TransitionMatrix::default(); 2];
        let mut env = SchedulingEnv::new(mats, array![[1.0, 0.5]]).unwrap();
        let mut agent = Agent::Tabular(QTable::new(2, 0.9, LearningRate::RescaledHarmonic).unwrap());
        let cfg = TrainConfig {
            episodes: 20,
            slots_per_episode: 100,
            epsilon: EpsilonSchedule::constant(1.0),
            ..TrainConfig::default()
        };
        let log = train_agent(&mut agent, &mut env, &cfg).unwrap();
        assert_eq!(log.rows.len(), 20);
        assert!(log.rows.iter().all(|r| r.wall_ms == 0 && r.epsilon == 1.0));
    }

    #[test]
    fn rejects_mismatched_agent() {
        let mats = vec![TransitionMatrix::default(); 2];
        let mut env = SchedulingEnv::new(mats, array![[1.0, 0.5]]).unwrap();
        let mut agent = Agent::Tabular(QTable::new(3, 0.9, LearningRate::Harmonic).unwrap());
        assert!(train_agent(&mut agent, &mut env, &TrainConfig::default()).is_err());
        let mut agent = Agent::Tabular(QTable::new(2, 0.9, LearningRate::Harmonic).unwrap());
        let cfg = TrainConfig { allocations: 2, ..TrainConfig::default() };
        assert!(train_agent(&mut agent, &mut env, &cfg).is_err());
    }
}
