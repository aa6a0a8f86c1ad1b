use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::state::{argmax, space_sizes, Action, AgentState};
use crate::error::{invalid, Error, Result};

/// Largest channel count a dense table is built for.
pub const MAX_TABULAR_CHANNELS: usize = 12;

/// Step size as a function of the visit count `n ≥ 1` of the updated pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum LearningRate {
    Constant { alpha: f64 },
    /// `1 / n`.
    Harmonic,
    /// `1 / (1 + (1 - γ)(n - 1))`: still Θ(1/n) but with a horizon-scaled
    /// constant, which avoids the `n^-(1-γ)` bias decay of plain `1/n`.
    RescaledHarmonic,
}

impl LearningRate {
    pub fn alpha(&self, visits: u64, gamma: f64) -> f64 {
        let n = visits.max(1) as f64;
        match *self {
            LearningRate::Constant { alpha } => alpha,
            LearningRate::Harmonic => 1.0 / n,
            LearningRate::RescaledHarmonic => 1.0 / (1.0 + (1.0 - gamma) * (n - 1.0)),
        }
    }
}

/// Dense `(2^M + 1) × (M + 1)` action-value table with visit counts.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    num_channels: usize,
    values: Array2<f64>,
    visits: Array2<u64>,
    gamma: f64,
    rate: LearningRate,
}

impl QTable {
    pub fn new(num_channels: usize, gamma: f64, rate: LearningRate) -> Result<Self> {
        if num_channels > MAX_TABULAR_CHANNELS {
            return Err(Error::TooManyChannels {
                m: num_channels,
                limit: MAX_TABULAR_CHANNELS,
                context: "tabular Q-learning",
            });
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(invalid("gamma", format!("{gamma} outside [0, 1)")));
        }
        if let LearningRate::Constant { alpha } = rate {
            if !(0.0..=1.0).contains(&alpha) {
                return Err(invalid("alpha", format!("{alpha} outside [0, 1]")));
            }
        }
        let (states, actions) = space_sizes(num_channels)?;
        Ok(Self {
            num_channels,
            values: Array2::zeros((states as usize, actions)),
            visits: Array2::zeros((states as usize, actions)),
            gamma,
            rate,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rate(&self) -> LearningRate {
        self.rate
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn q_values(&self, state: &AgentState) -> Result<Vec<f64>> {
        let s = state.index(self.num_channels)?;
        Ok(self.values.row(s).to_vec())
    }

    pub fn get(&self, state: &AgentState, action: Action) -> Result<f64> {
        let s = state.index(self.num_channels)?;
        self.check_action(action)?;
        Ok(self.values[[s, action.value()]])
    }

    pub fn set(&mut self, state: &AgentState, action: Action, value: f64) -> Result<()> {
        let s = state.index(self.num_channels)?;
        self.check_action(action)?;
        self.values[[s, action.value()]] = value;
        Ok(())
    }

    pub fn greedy(&self, state: &AgentState) -> Result<Action> {
        let q = self.q_values(state)?;
        Action::new(argmax(&q), self.num_channels)
    }

    /// Number of updates applied to any action of `state`.
    pub fn state_visits(&self, state: &AgentState) -> Result<u64> {
        let s = state.index(self.num_channels)?;
        Ok(self.visits.row(s).sum())
    }

    fn check_action(&self, action: Action) -> Result<()> {
        Action::new(action.value(), self.num_channels).map(|_| ())
    }

    /// One Q-learning backup with the table's learning-rate schedule.
    /// Returns the step size used.
    pub fn update(&mut self, state: &AgentState, action: Action, reward: f64, next: &AgentState) -> Result<f64> {
        let s = state.index(self.num_channels)?;
        self.check_action(action)?;
        self.visits[[s, action.value()]] += 1;
        let alpha = self.rate.alpha(self.visits[[s, action.value()]], self.gamma);
        q_update(self, state, action, reward, next, alpha)?;
        Ok(alpha)
    }
}

/// `Q(s,a) ← Q(s,a) + α (r + γ max_a' Q(s',a') − Q(s,a))`.
pub fn q_update(
    table: &mut QTable,
    state: &AgentState,
    action: Action,
    reward: f64,
    next: &AgentState,
    alpha: f64,
) -> Result<()> {
    if !reward.is_finite() {
        return Err(invalid("reward", "must be finite"));
    }
    let m = table.num_channels;
    let s = state.index(m)?;
    let s2 = next.index(m)?;
    table.check_action(action)?;
    let best_next = table
        .values
        .row(s2)
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let q = &mut table.values[[s, action.value()]];
    *q += alpha * (reward + table.gamma * best_next - *q);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::OccupancyVector;

    fn st(mask: u64, m: usize) -> AgentState {
        AgentState::Fused(OccupancyVector::from_mask(mask, m))
    }

    #[test]
    fn dimensions_and_refusal() {
        let t = QTable::new(3, 0.9, LearningRate::Harmonic).unwrap();
        assert_eq!(t.dims(), (9, 4));
        assert!(matches!(
            QTable::new(16, 0.9, LearningRate::Harmonic),
            Err(Error::TooManyChannels { m: 16, .. })
        ));
        assert!(QTable::new(12, 0.9, LearningRate::Harmonic).is_ok());
        assert!(QTable::new(2, 1.0, LearningRate::Harmonic).is_err());
    }

    #[test]
    fn unit_step_without_discount_stores_reward() {
        let mut t = QTable::new(2, 0.0, LearningRate::Constant { alpha: 1.0 }).unwrap();
        t.set(&st(3, 2), Action::IDLE, 7.0).unwrap();
        q_update(&mut t, &st(0, 2), Action::transmit(1), 0.25, &st(3, 2), 1.0).unwrap();
        assert_eq!(t.get(&st(0, 2), Action::transmit(1)).unwrap(), 0.25);
    }

    #[test]
    fn half_step_arithmetic() {
        let mut t = QTable::new(1, 0.9, LearningRate::Harmonic).unwrap();
        let next = AgentState::Initial;
        t.set(&next, Action::transmit(0), 2.0).unwrap();
        q_update(&mut t, &st(0, 1), Action::IDLE, 1.0, &next, 0.5).unwrap();
        assert!((t.get(&st(0, 1), Action::IDLE).unwrap() - 1.4).abs() < 1e-12);
    }

    #[test]
    fn self_loop_converges_to_geometric_sum() {
        let mut t = QTable::new(1, 0.5, LearningRate::Constant { alpha: 0.5 }).unwrap();
        let s = st(0, 1);
        for _ in 0..200 {
            // only one action is ever valued, so max over s' is that action
            q_update(&mut t, &s, Action::IDLE, 1.0, &s, 0.5).unwrap();
            t.set(&s, Action::transmit(0), f64::NEG_INFINITY).unwrap();
        }
        assert!((t.get(&s, Action::IDLE).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn schedules() {
        assert_eq!(LearningRate::Harmonic.alpha(4, 0.9), 0.25);
        assert_eq!(LearningRate::RescaledHarmonic.alpha(1, 0.9), 1.0);
        assert!((LearningRate::RescaledHarmonic.alpha(11, 0.9) - 0.5).abs() < 1e-12);
        assert_eq!(LearningRate::Constant { alpha: 0.3 }.alpha(99, 0.9), 0.3);
    }

    #[test]
    fn update_counts_visits() {
        let mut t = QTable::new(2, 0.9, LearningRate::Harmonic).unwrap();
        let s = st(1, 2);
        assert_eq!(t.update(&s, Action::IDLE, 1.0, &s).unwrap(), 1.0);
        assert_eq!(t.update(&s, Action::IDLE, 1.0, &s).unwrap(), 0.5);
        assert_eq!(t.update(&s, Action::transmit(1), 1.0, &s).unwrap(), 1.0);
        assert_eq!(t.state_visits(&s).unwrap(), 3);
        assert!(t.update(&s, Action::new(2, 2).unwrap(), f64::NAN, &s).is_err());
    }
}
