use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::replay::{Experience, ReplayBuffer};
use super::state::{argmax, space_sizes, AgentState};
use crate::error::{invalid, Error, Result};
use crate::nn::{Activation, Network, Optimizer, OptimizerKind};
use crate::rng::{domain, substream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DqnVariant {
    /// Max over the target network, hard target copies.
    Dqn,
    /// Double estimator, hard target copies.
    Ddqn,
    /// Double estimator, Polyak-averaged target.
    DdqnSoft,
}

impl DqnVariant {
    pub fn name(self) -> &'static str {
        match self {
            DqnVariant::Dqn => "dqn",
            DqnVariant::Ddqn => "ddqn",
            DqnVariant::DdqnSoft => "ddqn-soft",
        }
    }

    pub fn double(self) -> bool {
        !matches!(self, DqnVariant::Dqn)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqnParams {
    pub variant: DqnVariant,
    pub gamma: f64,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Gradient steps between hard target copies.
    pub target_period: u64,
    /// Polyak weight for the soft variant.
    pub tau: f64,
    pub divergence_limit: f64,
}

impl Default for DqnParams {
    fn default() -> Self {
        Self {
            variant: DqnVariant::DdqnSoft,
            gamma: 0.9,
            learning_rate: 1e-3,
            hidden: vec![64, 64],
            replay_capacity: 10_000,
            batch_size: 32,
            target_period: 100,
            tau: 0.01,
            divergence_limit: 1e6,
        }
    }
}

impl DqnParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(invalid("gamma", format!("{} outside [0, 1)", self.gamma)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate", "must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(invalid("hidden", "layer widths must be positive"));
        }
        if self.replay_capacity == 0 || self.batch_size == 0 || self.batch_size > self.replay_capacity {
            return Err(invalid("batch_size", "need 1 <= batch_size <= replay_capacity"));
        }
        if self.target_period == 0 {
            return Err(invalid("target_period", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(invalid("tau", "must lie in [0, 1]"));
        }
        if !(self.divergence_limit > 0.0) {
            return Err(invalid("divergence_limit", "must be positive"));
        }
        Ok(())
    }
}

/// Primary and target Q-networks with replay memory.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    params: DqnParams,
    num_channels: usize,
    primary: Network,
    target: Network,
    optimizer: Optimizer,
    replay: ReplayBuffer,
    updates: u64,
}

impl DqnAgent {
    pub fn new(num_channels: usize, params: DqnParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let (_, actions) = space_sizes(num_channels)?;
        let mut dims = vec![num_channels];
        dims.extend_from_slice(&params.hidden);
        dims.push(actions);
        let mut rng = substream(seed, domain::INIT, 0);
        let primary = Network::new(&dims, Activation::Relu, Activation::Identity, &mut rng)?;
        let target = primary.clone_weights();
        let optimizer = Optimizer::new(OptimizerKind::adam(), params.learning_rate, &primary)?;
        let replay = ReplayBuffer::new(params.replay_capacity)?;
        Ok(Self {
            params,
            num_channels,
            primary,
            target,
            optimizer,
            replay,
            updates: 0,
        })
    }

    /// Rebuilds an agent around saved networks with an empty memory.
    pub fn from_networks(num_channels: usize, params: DqnParams, primary: Network, target: Network) -> Result<Self> {
        params.validate()?;
        let (_, actions) = space_sizes(num_channels)?;
        if primary.input_dim() != num_channels || primary.output_dim() != actions || !primary.same_shape(&target) {
            return Err(Error::DimensionMismatch {
                context: "agent networks",
                expected: actions,
                actual: primary.output_dim(),
            });
        }
        let optimizer = Optimizer::new(OptimizerKind::adam(), params.learning_rate, &primary)?;
        let replay = ReplayBuffer::new(params.replay_capacity)?;
        Ok(Self {
            params,
            num_channels,
            primary,
            target,
            optimizer,
            replay,
            updates: 0,
        })
    }

    pub fn params(&self) -> &DqnParams {
        &self.params
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn primary(&self) -> &Network {
        &self.primary
    }

    pub fn target(&self) -> &Network {
        &self.target
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn q_values(&self, state: &AgentState) -> Result<Vec<f64>> {
        self.primary.forward(&state.features(self.num_channels))
    }

    pub fn remember(&mut self, experience: Experience) -> Result<()> {
        self.replay.push(experience)
    }

    fn batch_inputs(&self, states: impl Iterator<Item = AgentState>, rows: usize) -> Array2<f64> {
        let m = self.num_channels;
        let mut x = Array2::zeros((rows, m));
        for (mut row, s) in x.rows_mut().into_iter().zip(states) {
            for (dst, v) in row.iter_mut().zip(s.features(m)) {
                *dst = v;
            }
        }
        x
    }

    /// One gradient step on a replay batch. `Ok(None)` while the memory
    /// is smaller than a batch; otherwise the batch loss.
    pub fn learn<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Option<f64>> {
        let b = self.params.batch_size;
        if self.replay.len() < b {
            return Ok(None);
        }
        let batch: Vec<Experience> = self.replay.sample(b, rng)?.into_iter().cloned().collect();
        let refs: Vec<&Experience> = batch.iter().collect();
        let targets = ddqn_targets(self, &refs)?;
        let x = self.batch_inputs(batch.iter().map(|e| e.state.clone()), b);
        let mut loss = 0.0;
        let mut peak = 0.0f64;
        let grads = self.primary.gradients_from_output(x.view(), |out| {
            let mut g = Array2::zeros(out.raw_dim());
            for (i, e) in batch.iter().enumerate() {
                let a = e.action.value();
                let diff = out[[i, a]] - targets[i];
                loss += diff * diff / b as f64;
                g[[i, a]] = 2.0 * diff / b as f64;
            }
            peak = out.iter().fold(0.0, |acc, v| acc.max(v.abs()));
            g
        })?;
        if !(peak <= self.params.divergence_limit) || !loss.is_finite() {
            return Err(Error::Diverged {
                step: self.updates,
                magnitude: peak,
            });
        }
        self.optimizer.step(&mut self.primary, &grads);
        self.updates += 1;
        match self.params.variant {
            DqnVariant::DdqnSoft => soft_update(&mut self.target, &self.primary, self.params.tau)?,
            _ => {
                if self.updates.is_multiple_of(self.params.target_period) {
                    self.target.copy_from(&self.primary)?;
                }
            }
        }
        Ok(Some(loss))
    }
}

/// Regression targets for a batch: `r + γ Q'(s', argmax_a Q(s', a))` for
/// double variants, `r + γ max_a Q'(s', a)` for vanilla DQN. The task is
/// continuing, so no terminal masking.
pub fn ddqn_targets(agent: &DqnAgent, batch: &[&Experience]) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(invalid("batch", "must be non-empty"));
    }
    let gamma = agent.params.gamma;
    let next = agent.batch_inputs(batch.iter().map(|e| e.next_state.clone()), batch.len());
    let q_target = agent.target.forward_batch(next.view())?;
    let q_primary = if agent.params.variant.double() {
        Some(agent.primary.forward_batch(next.view())?)
    } else {
        None
    };
    Ok(batch
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let row = q_target.row(i);
            let bootstrap = match &q_primary {
                Some(qp) => {
                    let a = argmax(&qp.row(i).to_vec());
                    row[a]
                }
                None => row.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            };
            e.reward + gamma * bootstrap
        })
        .collect())
}

/// `θ' ← τ θ + (1 − τ) θ'`.
pub fn soft_update(target: &mut Network, primary: &Network, tau: f64) -> Result<()> {
    target.soft_update_from(primary, tau)
}
