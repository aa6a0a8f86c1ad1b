use rand::seq::index::sample;
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::spectrum::OccupancyVector;

/// What the allocator knows when it decides: the previous fused vector,
/// or nothing yet at the start of an episode.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AgentState {
    Initial,
    Fused(OccupancyVector),
}

impl AgentState {
    /// Table row: the bit pattern read as an integer (bit `m` weighs
    /// `2^m`), `2^M` for `Initial`.
    pub fn index(&self, m: usize) -> Result<usize> {
        match self {
            AgentState::Initial => Ok(1 << m),
            AgentState::Fused(v) => {
                if v.len() != m {
                    return Err(Error::DimensionMismatch {
                        context: "agent state",
                        expected: m,
                        actual: v.len(),
                    });
                }
                Ok(v.to_mask() as usize)
            }
        }
    }

    /// Inverse of [`AgentState::index`].
    pub fn from_index(index: usize, m: usize) -> Result<Self> {
        match index.cmp(&(1 << m)) {
            std::cmp::Ordering::Less => Ok(AgentState::Fused(OccupancyVector::from_mask(index as u64, m))),
            std::cmp::Ordering::Equal => Ok(AgentState::Initial),
            std::cmp::Ordering::Greater => Err(Error::IndexOutOfRange {
                context: "state index",
                index,
                size: (1 << m) + 1,
            }),
        }
    }

    /// Network input: the bits as reals, all 0.5 for `Initial`.
    pub fn features(&self, m: usize) -> Vec<f64> {
        match self {
            AgentState::Initial => vec![0.5; m],
            AgentState::Fused(v) => v.bits().iter().map(|&b| f64::from(b)).collect(),
        }
    }

    pub fn is_vacant(&self, channel: usize) -> bool {
        match self {
            AgentState::Initial => false,
            AgentState::Fused(v) => v.is_vacant(channel),
        }
    }
}

/// 0 = idle, `m ≥ 1` = transmit on channel `m - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Action(usize);

impl Action {
    pub const IDLE: Action = Action(0);

    pub fn new(value: usize, num_channels: usize) -> Result<Self> {
        if value > num_channels {
            return Err(Error::IndexOutOfRange {
                context: "action",
                index: value,
                size: num_channels + 1,
            });
        }
        Ok(Action(value))
    }

    pub fn transmit(channel: usize) -> Self {
        Action(channel + 1)
    }

    pub fn value(self) -> usize {
        self.0
    }

    pub fn channel(self) -> Option<usize> {
        self.0.checked_sub(1)
    }
}

/// `(2^M + 1, M + 1)`: table rows and network outputs.
pub fn space_sizes(m: usize) -> Result<(u64, usize)> {
    if m == 0 || m > 62 {
        return Err(invalid("num_channels", "must be in 1..=62"));
    }
    Ok(((1u64 << m) + 1, m + 1))
}

pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = i;
        }
    }
    best
}

pub fn epsilon_greedy<R: Rng + ?Sized>(q_values: &[f64], epsilon: f64, rng: &mut R) -> Result<Action> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(invalid("epsilon", format!("{epsilon} outside [0, 1]")));
    }
    if q_values.is_empty() {
        return Err(invalid("q_values", "empty"));
    }
    if epsilon > 0.0 && rng.random_bool(epsilon) {
        return Ok(Action(rng.random_range(0..q_values.len())));
    }
    Ok(Action(argmax(q_values)))
}

/// The `k` highest-valued actions in descending order, lower index first
/// among equals.
pub fn top_k_actions(q_values: &[f64], k: usize) -> Result<Vec<Action>> {
    if k == 0 || k > q_values.len() {
        return Err(Error::IndexOutOfRange {
            context: "top-k size",
            index: k,
            size: q_values.len() + 1,
        });
    }
    let mut order: Vec<usize> = (0..q_values.len()).collect();
    order.sort_by(|&a, &b| q_values[b].total_cmp(&q_values[a]).then(a.cmp(&b)));
    Ok(order.into_iter().take(k).map(Action).collect())
}

/// ε-greedy over `k` distinct actions: with probability ε a uniform
/// `k`-subset, otherwise [`top_k_actions`].
pub fn epsilon_greedy_k<R: Rng + ?Sized>(
    q_values: &[f64],
    k: usize,
    epsilon: f64,
    rng: &mut R,
) -> Result<Vec<Action>> {
    if k == 1 {
        return Ok(vec![epsilon_greedy(q_values, epsilon, rng)?]);
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(invalid("epsilon", format!("{epsilon} outside [0, 1]")));
    }
    let top = top_k_actions(q_values, k)?;
    if epsilon > 0.0 && rng.random_bool(epsilon) {
        return Ok(sample(rng, q_values.len(), k).into_iter().map(Action).collect());
    }
    Ok(top)
}
