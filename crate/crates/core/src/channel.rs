//! Primary-user environment: independent two-state Markov chains per
//! sub-channel and a static per-link SINR table.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::spectrum::OccupancyVector;

/// Two-state chain for one sub-channel. Rows are `[1-p01, p01]` (from
/// vacant) and `[p10, 1-p10]` (from busy).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionMatrix {
    /// Probability vacant → busy.
    pub p01: f64,
    /// Probability busy → vacant.
    pub p10: f64,
}

impl TransitionMatrix {
    pub fn new(p01: f64, p10: f64) -> Result<Self> {
        let m = Self { p01, p10 };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p01", self.p01), ("p10", self.p10)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(name, format!("probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> [[f64; 2]; 2] {
        [[1.0 - self.p01, self.p01], [self.p10, 1.0 - self.p10]]
    }

    /// Probability of moving from `from` to `to`.
    pub fn prob(&self, from: u8, to: u8) -> f64 {
        self.rows()[from as usize][to as usize]
    }

    /// Probability that the next state is busy given the current one.
    pub fn busy_next(&self, from: u8) -> f64 {
        if from == 0 {
            self.p01
        } else {
            1.0 - self.p10
        }
    }
}

impl Default for TransitionMatrix {
    fn default() -> Self {
        Self { p01: 0.2, p10: 0.3 }
    }
}

/// `(prob_vacant, prob_busy)` of the chain's unique stationary law.
pub fn stationary_distribution(matrix: &TransitionMatrix) -> Result<(f64, f64)> {
    let total = matrix.p01 + matrix.p10;
    if total <= 0.0 {
        return Err(Error::NonUniqueStationary);
    }
    Ok((matrix.p10 / total, matrix.p01 / total))
}

pub(crate) fn check_matrices(matrices: &[TransitionMatrix], m: usize) -> Result<()> {
    if matrices.len() != m {
        return Err(Error::DimensionMismatch {
            context: "transition matrices",
            expected: m,
            actual: matrices.len(),
        });
    }
    matrices.iter().try_for_each(TransitionMatrix::validate)
}

/// True occupancy plus the generator that drives it.
#[derive(Debug, Clone)]
pub struct EnvState {
    pub true_occupancy: OccupancyVector,
    pub slot: u64,
    rng: ChaCha8Rng,
}

impl EnvState {
    pub fn new(true_occupancy: OccupancyVector, seed: u64) -> Self {
        Self {
            true_occupancy,
            slot: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Draws the initial occupancy from each channel's stationary law.
    pub fn from_stationary(matrices: &[TransitionMatrix], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let occupancy = draw_stationary(matrices, &mut rng)?;
        Ok(Self {
            true_occupancy: occupancy,
            slot: 0,
            rng,
        })
    }

    /// Advances every channel one slot.
    pub fn advance(&mut self, matrices: &[TransitionMatrix]) -> Result<()> {
        check_matrices(matrices, self.true_occupancy.len())?;
        transition(&mut self.true_occupancy, matrices, &mut self.rng);
        self.slot += 1;
        Ok(())
    }
}

/// Functional form of [`EnvState::advance`].
pub fn step(mut state: EnvState, matrices: &[TransitionMatrix]) -> Result<EnvState> {
    state.advance(matrices)?;
    Ok(state)
}

pub(crate) fn transition<R: Rng + ?Sized>(
    occupancy: &mut OccupancyVector,
    matrices: &[TransitionMatrix],
    rng: &mut R,
) {
    for (m, matrix) in matrices.iter().enumerate() {
        let u: f64 = rng.random();
        let busy = u < matrix.busy_next(occupancy.bit(m));
        occupancy.set(m, busy);
    }
}

pub(crate) fn draw_stationary<R: Rng + ?Sized>(
    matrices: &[TransitionMatrix],
    rng: &mut R,
) -> Result<OccupancyVector> {
    let mut bits = Vec::with_capacity(matrices.len());
    for matrix in matrices {
        let (_, busy) = stationary_distribution(matrix)?;
        let u: f64 = rng.random();
        bits.push(u < busy);
    }
    Ok(OccupancyVector::from_bools(bits))
}

/// Length-`horizon` occupancy trajectory started from stationarity.
pub fn sample_occupancy(
    matrices: &[TransitionMatrix],
    horizon: usize,
    seed: u64,
) -> Result<Vec<OccupancyVector>> {
    if horizon == 0 {
        return Err(invalid("horizon", "must be >= 1"));
    }
    matrices.iter().try_for_each(TransitionMatrix::validate)?;
    let mut state = EnvState::from_stationary(matrices, seed)?;
    let mut out = Vec::with_capacity(horizon);
    out.push(state.true_occupancy.clone());
    for _ in 1..horizon {
        state.advance(matrices)?;
        out.push(state.true_occupancy.clone());
    }
    Ok(out)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// Static SINR tables standing in for propagation geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkModel {
    /// Per-UAV SINR (dB) of the sensing observations.
    pub sensing_sinr_db: Vec<f64>,
    /// `[uav][channel]` SINR (dB) of the access link.
    pub access_sinr_db: Vec<Vec<f64>>,
}

impl LinkModel {
    /// Three hovering locations with the third one 10 dB weaker in sensing.
    /// Access SINR falls linearly from 20 dB on the first channel to 5 dB
    /// on the last so channels have distinct value.
    pub fn preset(num_uavs: usize, num_channels: usize, sensing_sinr_db: f64) -> Self {
        let sensing = (0..num_uavs)
            .map(|k| if k % 3 == 2 { sensing_sinr_db - 10.0 } else { sensing_sinr_db })
            .collect();
        let row: Vec<f64> = (0..num_channels)
            .map(|m| {
                if num_channels == 1 {
                    20.0
                } else {
                    20.0 - 15.0 * m as f64 / (num_channels - 1) as f64
                }
            })
            .collect();
        Self {
            sensing_sinr_db: sensing,
            access_sinr_db: vec![row; num_uavs],
        }
    }

    pub fn validate(&self, num_uavs: usize, num_channels: usize) -> Result<()> {
        if self.sensing_sinr_db.len() != num_uavs {
            return Err(Error::DimensionMismatch {
                context: "sensing_sinr_db",
                expected: num_uavs,
                actual: self.sensing_sinr_db.len(),
            });
        }
        if self.access_sinr_db.len() != num_uavs {
            return Err(Error::DimensionMismatch {
                context: "access_sinr_db rows",
                expected: num_uavs,
                actual: self.access_sinr_db.len(),
            });
        }
        for row in &self.access_sinr_db {
            if row.len() != num_channels {
                return Err(Error::DimensionMismatch {
                    context: "access_sinr_db columns",
                    expected: num_channels,
                    actual: row.len(),
                });
            }
        }
        let finite = self
            .sensing_sinr_db
            .iter()
            .chain(self.access_sinr_db.iter().flatten())
            .all(|v| v.is_finite());
        if !finite {
            return Err(invalid("link", "SINR tables must be finite"));
        }
        Ok(())
    }

    pub fn num_uavs(&self) -> usize {
        self.sensing_sinr_db.len()
    }

    pub fn num_channels(&self) -> usize {
        self.access_sinr_db.first().map_or(0, Vec::len)
    }

    /// Access SINR of `(uav, channel)` in dB.
    pub fn sinr_for(&self, uav: usize, channel: usize) -> Result<f64> {
        let row = self.access_sinr_db.get(uav).ok_or(Error::IndexOutOfRange {
            context: "uav",
            index: uav,
            size: self.access_sinr_db.len(),
        })?;
        row.get(channel).copied().ok_or(Error::IndexOutOfRange {
            context: "channel",
            index: channel,
            size: row.len(),
        })
    }

    pub fn sensing_sinr(&self, uav: usize) -> Result<f64> {
        self.sensing_sinr_db.get(uav).copied().ok_or(Error::IndexOutOfRange {
            context: "uav",
            index: uav,
            size: self.sensing_sinr_db.len(),
        })
    }
}
