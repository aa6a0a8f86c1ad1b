//! Agent checkpoint layout (little-endian):
//!
//! ```text
//! magic     4 bytes "SKAG"
//! version   u32     1
//! kind      u32     0 = table, 1 = network
//! channels  u32     M
//! gamma     f64
//! table:    u32 rate kind (0 constant, 1 harmonic, 2 rescaled), f64 alpha,
//!           (2^M + 1) × (M + 1) f64 values, row-major
//! network:  u32 variant (0 dqn, 1 ddqn, 2 ddqn-soft), f64 learning rate,
//!           f64 tau, u64 target period, u32 replay capacity, u32 batch,
//!           f64 divergence limit, then primary and target SKNN blocks
//! ```

use std::io::{Read, Write};

use super::dqn::{DqnAgent, DqnParams, DqnVariant};
use super::state::{Action, AgentState};
use super::tabular::{LearningRate, QTable};
use super::train::Agent;
use crate::error::{Error, Result};
use crate::nn::{read_network, write_network};

const MAGIC: &[u8; 4] = b"SKAG";
const VERSION: u32 = 1;

fn bad(reason: impl Into<String>) -> Error {
    Error::Format {
        what: "agent checkpoint",
        reason: reason.into(),
    }
}

fn read_bytes<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_bytes(r)?))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_bytes(r)?))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(read_bytes(r)?))
}

pub fn write_agent<W: Write>(agent: &Agent, w: &mut W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    match agent {
        Agent::Tabular(t) => {
            w.write_all(&0u32.to_le_bytes())?;
            w.write_all(&(t.num_channels() as u32).to_le_bytes())?;
            w.write_all(&t.gamma().to_le_bytes())?;
            let (code, alpha) = match t.rate() {
                LearningRate::Constant { alpha } => (0u32, alpha),
                LearningRate::Harmonic => (1, 0.0),
                LearningRate::RescaledHarmonic => (2, 0.0),
            };
            w.write_all(&code.to_le_bytes())?;
            w.write_all(&alpha.to_le_bytes())?;
            for v in t.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Agent::Dqn(d) => {
            let p = d.params();
            w.write_all(&1u32.to_le_bytes())?;
            w.write_all(&(d.num_channels() as u32).to_le_bytes())?;
            w.write_all(&p.gamma.to_le_bytes())?;
            let variant: u32 = match p.variant {
                DqnVariant::Dqn => 0,
                DqnVariant::Ddqn => 1,
                DqnVariant::DdqnSoft => 2,
            };
            w.write_all(&variant.to_le_bytes())?;
            w.write_all(&p.learning_rate.to_le_bytes())?;
            w.write_all(&p.tau.to_le_bytes())?;
            w.write_all(&p.target_period.to_le_bytes())?;
            w.write_all(&(p.replay_capacity as u32).to_le_bytes())?;
            w.write_all(&(p.batch_size as u32).to_le_bytes())?;
            w.write_all(&p.divergence_limit.to_le_bytes())?;
            write_network(d.primary(), w)?;
            write_network(d.target(), w)?;
        }
    }
    Ok(())
}

pub fn read_agent<R: Read>(r: &mut R) -> Result<Agent> {
    let magic: [u8; 4] = read_bytes(r)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let kind = read_u32(r)?;
    let m = read_u32(r)? as usize;
    if m == 0 || m > 62 {
        return Err(bad(format!("channel count {m}")));
    }
    let gamma = read_f64(r)?;
    match kind {
        0 => {
            let code = read_u32(r)?;
            let alpha = read_f64(r)?;
            let rate = match code {
                0 => LearningRate::Constant { alpha },
                1 => LearningRate::Harmonic,
                2 => LearningRate::RescaledHarmonic,
                c => return Err(bad(format!("unknown learning-rate kind {c}"))),
            };
            let mut table = QTable::new(m, gamma, rate).map_err(|e| bad(e.to_string()))?;
            let (states, actions) = table.dims();
            for s in 0..states {
                let state = AgentState::from_index(s, m)?;
                for a in 0..actions {
                    table.set(&state, Action::new(a, m)?, read_f64(r)?)?;
                }
            }
            Ok(Agent::Tabular(table))
        }
        1 => {
            let variant = match read_u32(r)? {
                0 => DqnVariant::Dqn,
                1 => DqnVariant::Ddqn,
                2 => DqnVariant::DdqnSoft,
                v => return Err(bad(format!("unknown variant {v}"))),
            };
            let learning_rate = read_f64(r)?;
            let tau = read_f64(r)?;
            let target_period = read_u64(r)?;
            let replay_capacity = read_u32(r)? as usize;
            let batch_size = read_u32(r)? as usize;
            let divergence_limit = read_f64(r)?;
            let primary = read_network(r)?;
            let target = read_network(r)?;
            let dims = primary.dims();
            let params = DqnParams {
                variant,
                gamma,
                learning_rate,
                hidden: dims[1..dims.len() - 1].to_vec(),
                replay_capacity,
                batch_size,
                target_period,
                tau,
                divergence_limit,
            };
            let agent = DqnAgent::from_networks(m, params, primary, target).map_err(|e| bad(e.to_string()))?;
            Ok(Agent::Dqn(agent))
        }
        k => Err(bad(format!("unknown agent kind {k}"))),
    }
}
