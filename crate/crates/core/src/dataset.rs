//! Labeled observation sets and their binary file format.
//!
//! # File layout
//!
//! All fields little-endian.
//!
//! ```text
//! magic                 4 bytes "SKIQ"
//! version               u32   1
//! num_subchannels (M)   u32
//! samples (N)           u32
//! num_uavs (K)          u32
//! subcarriers/channel   u32
//! grid_len              u32, then grid_len × f32 SINR grid (dB)
//! gains_len             u32, then gains_len × f32 interference gains (dB)
//! seed                  u64
//! train_fraction        f64
//! validation_fraction   f64
//! records_per_uav       u64
//! records               K × records_per_uav, each:
//!     label   u32   bit m holds sub-channel m (bit m−1 = channel m, 1-based)
//!     sinr_db f32
//!     samples N × (re f32, im f32)
//! ```
//!
//! Records are grouped by UAV; inside a UAV stream they are grouped by SINR
//! grid entry in grid order. The train/validation/test split is not stored:
//! it is recomputed from the seed, stratified by SINR grid entry, and is the
//! same for every UAV stream.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use num_complex::Complex32;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{draw_stationary, sample_occupancy, TransitionMatrix};
use crate::error::{invalid, Error, Result};
use crate::iq::{IqObservation, SynthConfig, Synthesizer};
use crate::nn::{read_f32_le, read_u32_le};
use crate::rng::{domain, substream};
use crate::spectrum::OccupancyVector;

const MAGIC: &[u8; 4] = b"SKIQ";
const VERSION: u32 = 1;

/// Where ground-truth labels come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum OccupancySource {
    /// Trajectories of the per-channel Markov chains.
    Markov { matrices: Vec<TransitionMatrix> },
    /// Every one of the 2^M labels equally likely.
    Uniform,
}

impl OccupancySource {
    fn labels(&self, m: usize, count: usize, seed: u64) -> Result<Vec<OccupancyVector>> {
        match self {
            OccupancySource::Markov { matrices } => {
                if matrices.len() != m {
                    return Err(Error::DimensionMismatch {
                        context: "occupancy source matrices",
                        expected: m,
                        actual: matrices.len(),
                    });
                }
                sample_occupancy(matrices, count, seed)
            }
            OccupancySource::Uniform => {
                let mut rng = substream(seed, domain::LABELS, 0);
                Ok((0..count)
                    .map(|_| OccupancyVector::from_mask(rng.random::<u64>(), m))
                    .collect())
            }
        }
    }

    fn independent_label<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<OccupancyVector> {
        match self {
            OccupancySource::Markov { matrices } => draw_stationary(matrices, rng),
            OccupancySource::Uniform => Ok(OccupancyVector::from_mask(rng.random::<u64>(), m)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitPart {
    Train,
    Validation,
    Test,
}

/// Positions (within one UAV stream) of each split.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn part(&self, part: SplitPart) -> &[usize] {
        match part {
            SplitPart::Train => &self.train,
            SplitPart::Validation => &self.validation,
            SplitPart::Test => &self.test,
        }
    }
}

/// Splits each stratum independently: the first `round(train·n)` shuffled
/// members go to training, the next `round(validation·n)` to validation.
pub fn stratified_split(strata: &[usize], train: f64, validation: f64, seed: u64) -> Split {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &s) in strata.iter().enumerate() {
        groups.entry(s).or_default().push(i);
    }
    let mut split = Split::default();
    for (key, mut members) in groups {
        let mut rng = substream(seed, domain::SPLIT, key as u64);
        members.shuffle(&mut rng);
        let n = members.len();
        let n_train = ((train * n as f64).round() as usize).min(n);
        let n_val = ((validation * n as f64).round() as usize).min(n - n_train);
        split.train.extend_from_slice(&members[..n_train]);
        split.validation.extend_from_slice(&members[n_train..n_train + n_val]);
        split.test.extend_from_slice(&members[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.validation.sort_unstable();
    split.test.sort_unstable();
    split
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: SynthConfig,
    pub num_uavs: usize,
    /// Grouped by UAV, `records_per_uav` each.
    pub observations: Vec<IqObservation>,
    pub split: Split,
}

impl Dataset {
    pub fn records_per_uav(&self) -> usize {
        self.observations.len() / self.num_uavs.max(1)
    }

    pub fn stream(&self, uav: usize) -> &[IqObservation] {
        let n = self.records_per_uav();
        &self.observations[uav * n..(uav + 1) * n]
    }

    pub fn part(&self, part: SplitPart, uav: usize) -> Vec<&IqObservation> {
        let stream = self.stream(uav);
        self.split.part(part).iter().map(|&i| &stream[i]).collect()
    }

    /// Positions of `part` whose SINR grid entry is `grid_index`.
    pub fn part_at_sinr(&self, part: SplitPart, grid_index: usize) -> Vec<usize> {
        let per = self.records_per_uav() / self.config.sinr_grid_db.len();
        self.split
            .part(part)
            .iter()
            .copied()
            .filter(|&i| i / per == grid_index)
            .collect()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let c = &self.config;
        w.write_all(MAGIC)?;
        for v in [
            VERSION,
            c.num_subchannels as u32,
            c.samples_per_observation as u32,
            self.num_uavs as u32,
            c.subcarriers_per_subchannel as u32,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for list in [&c.sinr_grid_db, &c.interference_gains_db] {
            w.write_all(&(list.len() as u32).to_le_bytes())?;
            for &v in list.iter() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        w.write_all(&c.seed.to_le_bytes())?;
        w.write_all(&c.train_fraction.to_le_bytes())?;
        w.write_all(&c.validation_fraction.to_le_bytes())?;
        w.write_all(&(self.records_per_uav() as u64).to_le_bytes())?;

        let mut buf = Vec::with_capacity(8 + 8 * c.samples_per_observation);
        for obs in &self.observations {
            buf.clear();
            buf.extend_from_slice(&(obs.label.to_mask() as u32).to_le_bytes());
            buf.extend_from_slice(&obs.sinr_db.to_le_bytes());
            for s in &obs.samples {
                buf.extend_from_slice(&s.re.to_le_bytes());
                buf.extend_from_slice(&s.im.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            what: "dataset file",
            reason,
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad(format!("bad magic {magic:?}")));
        }
        let version = read_u32_le(r)?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let m = read_u32_le(r)? as usize;
        let n = read_u32_le(r)? as usize;
        let k = read_u32_le(r)? as usize;
        let s = read_u32_le(r)? as usize;
        let read_list = |r: &mut R| -> Result<Vec<f64>> {
            let len = read_u32_le(r)? as usize;
            if len > 1 << 16 {
                return Err(bad(format!("implausible list length {len}")));
            }
            (0..len).map(|_| read_f32_le(r).map(f64::from)).collect()
        };
        let grid = read_list(r)?;
        let gains = read_list(r)?;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let seed = u64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let train_fraction = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let validation_fraction = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let per_uav = u64::from_le_bytes(b8) as usize;

        let config = SynthConfig {
            num_subchannels: m,
            samples_per_observation: n,
            subcarriers_per_subchannel: s,
            sinr_grid_db: grid,
            interference_gains_db: gains,
            seed,
            train_fraction,
            validation_fraction,
        };
        config.validate().map_err(|e| bad(e.to_string()))?;
        if k == 0 || !per_uav.is_multiple_of(config.sinr_grid_db.len()) {
            return Err(bad(format!("{per_uav} records per UAV do not tile the SINR grid")));
        }

        let mut observations = Vec::with_capacity(k * per_uav);
        let mut record = vec![0u8; 8 + 8 * n];
        for i in 0..k * per_uav {
            r.read_exact(&mut record)?;
            let word = |j: usize| [record[j], record[j + 1], record[j + 2], record[j + 3]];
            let mask = u32::from_le_bytes(word(0));
            if m < 32 && mask >> m != 0 {
                return Err(bad(format!("record {i}: label bits beyond channel {m}")));
            }
            let sinr_db = f32::from_le_bytes(word(4));
            let samples = (0..n)
                .map(|t| {
                    let o = 8 + 8 * t;
                    Complex32::new(f32::from_le_bytes(word(o)), f32::from_le_bytes(word(o + 4)))
                })
                .collect();
            observations.push(IqObservation {
                samples,
                label: OccupancyVector::from_mask(u64::from(mask), m),
                sinr_db,
                uav_index: i / per_uav,
            });
        }
        let split = grid_split(&config, per_uav);
        Ok(Self {
            config,
            num_uavs: k,
            observations,
            split,
        })
    }
}

fn grid_split(config: &SynthConfig, per_uav: usize) -> Split {
    let per = per_uav / config.sinr_grid_db.len();
    let strata: Vec<usize> = (0..per_uav).map(|i| i / per).collect();
    stratified_split(&strata, config.train_fraction, config.validation_fraction, config.seed)
}

/// Single-UAV dataset: `count_per_sinr` observations per grid entry.
pub fn generate_dataset(
    config: &SynthConfig,
    source: &OccupancySource,
    count_per_sinr: usize,
) -> Result<Dataset> {
    generate_fleet_dataset(config, source, count_per_sinr, &[0.0])
}

/// Dataset where every UAV observes the same labels; UAV `k` sees each
/// grid SINR shifted by `sinr_offsets_db[k]`.
pub fn generate_fleet_dataset(
    config: &SynthConfig,
    source: &OccupancySource,
    count_per_sinr: usize,
    sinr_offsets_db: &[f64],
) -> Result<Dataset> {
    config.validate()?;
    if count_per_sinr == 0 {
        return Err(invalid("count_per_sinr", "must be >= 1"));
    }
    if sinr_offsets_db.is_empty() {
        return Err(invalid("sinr_offsets_db", "need at least one UAV"));
    }
    let m = config.num_subchannels;
    let synth = Synthesizer::from_config(config)?;
    let grid = &config.sinr_grid_db;

    let mut labels = Vec::with_capacity(grid.len() * count_per_sinr);
    for g in 0..grid.len() {
        let group_seed = substream(config.seed, domain::LABELS, g as u64).random::<u64>();
        labels.extend(source.labels(m, count_per_sinr, group_seed)?);
    }

    let per_uav = labels.len();
    let mut observations = Vec::with_capacity(per_uav * sinr_offsets_db.len());
    for (k, offset) in sinr_offsets_db.iter().enumerate() {
        for (i, label) in labels.iter().enumerate() {
            let index = (k * per_uav + i) as u64;
            let sinr = grid[i / count_per_sinr] + offset;
            let mut rng = substream(config.seed, domain::SYNTH, index);
            let mut obs = synth.synthesize(label, sinr, &mut rng)?;
            if !config.interference_gains_db.is_empty() {
                let mut irng = substream(config.seed, domain::INTERFERENCE, index);
                let neighbors = config
                    .interference_gains_db
                    .iter()
                    .map(|_| source.independent_label(m, &mut irng))
                    .collect::<Result<Vec<_>>>()?;
                obs = synth.add_interference(&obs, &neighbors, &config.interference_gains_db, &mut irng)?;
            }
            obs.uav_index = k;
            observations.push(obs);
        }
    }
    let split = grid_split(config, per_uav);
    Ok(Dataset {
        config: config.clone(),
        num_uavs: sinr_offsets_db.len(),
        observations,
        split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::stationary_distribution;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            num_subchannels: 4,
            samples_per_observation: 64,
            subcarriers_per_subchannel: 14,
            seed,
            ..SynthConfig::default()
        }
    }

    fn markov(m: usize) -> OccupancySource {
        OccupancySource::Markov {
            matrices: vec![TransitionMatrix::default(); m],
        }
    }

    #[test]
    fn split_sizes() {
        let ds = generate_dataset(&small(1), &markov(4), 100).unwrap();
        assert_eq!(ds.observations.len(), 400);
        assert_eq!(ds.split.train.len(), 280);
        assert_eq!(ds.split.validation.len(), 60);
        assert_eq!(ds.split.test.len(), 60);
        let mut all: Vec<usize> = ds
            .split
            .train
            .iter()
            .chain(&ds.split.validation)
            .chain(&ds.split.test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..400).collect::<Vec<_>>());
        for g in 0..4 {
            assert_eq!(ds.part_at_sinr(SplitPart::Train, g).len(), 70);
            assert_eq!(ds.part_at_sinr(SplitPart::Test, g).len(), 15);
        }
    }

    #[test]
    fn file_roundtrip_and_determinism() {
        let a = generate_dataset(&small(9), &markov(4), 10).unwrap();
        let b = generate_dataset(&small(9), &markov(4), 10).unwrap();
        let (mut fa, mut fb) = (Vec::new(), Vec::new());
        a.write_to(&mut fa).unwrap();
        b.write_to(&mut fb).unwrap();
        assert_eq!(fa, fb);
        let header = 4 + 4 * 5 + 4 + 4 * 4 + 4 + 8 + 8 + 8 + 8;
        assert_eq!(fa.len(), header + 40 * (8 + 8 * 64));
        let back = Dataset::read_from(&mut fa.as_slice()).unwrap();
        assert_eq!(back, a);

        let c = generate_dataset(&small(10), &markov(4), 10).unwrap();
        let mut fc = Vec::new();
        c.write_to(&mut fc).unwrap();
        assert_ne!(fa, fc);
    }

    #[test]
    fn label_bits_follow_channel_order() {
        let ds = generate_dataset(&small(3), &OccupancySource::Uniform, 5).unwrap();
        let mut buf = Vec::new();
        ds.write_to(&mut buf).unwrap();
        let header = 4 + 4 * 5 + 4 + 4 * 4 + 4 + 8 + 8 + 8 + 8;
        let first = u32::from_le_bytes(buf[header..header + 4].try_into().unwrap());
        let label = &ds.observations[0].label;
        for m in 0..4 {
            assert_eq!((first >> m) & 1, u32::from(label.bit(m)));
        }
    }

    #[test]
    fn rejects_corrupt_files() {
        let ds = generate_dataset(&small(4), &markov(4), 2).unwrap();
        let mut buf = Vec::new();
        ds.write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(Dataset::read_from(&mut bad.as_slice()).is_err());
        buf.truncate(buf.len() - 3);
        assert!(Dataset::read_from(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn label_marginals_follow_source() {
        let matrices = vec![
            TransitionMatrix::new(0.2, 0.3).unwrap(),
            TransitionMatrix::new(0.1, 0.4).unwrap(),
            TransitionMatrix::new(0.5, 0.5).unwrap(),
            TransitionMatrix::new(0.3, 0.1).unwrap(),
        ];
        let source = OccupancySource::Markov {
            matrices: matrices.clone(),
        };
        let cfg = SynthConfig {
            sinr_grid_db: vec![0.0],
            ..small(5)
        };
        let ds = generate_dataset(&cfg, &source, 10_000).unwrap();
        for (m, matrix) in matrices.iter().enumerate() {
            let (_, busy) = stationary_distribution(matrix).unwrap();
            let rate = ds.observations.iter().filter(|o| o.label.bit(m) == 1).count() as f64
                / ds.observations.len() as f64;
            assert!((rate - busy).abs() <= 0.05, "channel {m}: {rate} vs {busy}");
        }
    }

    #[test]
    fn fleet_streams_share_labels() {
        let ds = generate_fleet_dataset(&small(6), &markov(4), 5, &[0.0, 0.0, -10.0]).unwrap();
        assert_eq!(ds.num_uavs, 3);
        for i in 0..ds.records_per_uav() {
            let l = &ds.stream(0)[i].label;
            assert_eq!(&ds.stream(2)[i].label, l);
            assert_eq!(ds.stream(2)[i].sinr_db, ds.stream(0)[i].sinr_db - 10.0);
            assert_eq!(ds.stream(2)[i].uav_index, 2);
        }
        assert_ne!(ds.stream(0)[0].samples, ds.stream(1)[0].samples);
    }

    #[test]
    fn interference_config_is_applied() {
        let mut cfg = small(7);
        let plain = generate_dataset(&cfg, &markov(4), 3).unwrap();
        cfg.interference_gains_db = vec![-3.0];
        let noisy = generate_dataset(&cfg, &markov(4), 3).unwrap();
        assert_eq!(plain.observations.len(), noisy.observations.len());
        assert!(plain
            .observations
            .iter()
            .zip(&noisy.observations)
            .all(|(a, b)| a.label == b.label));
    }

    #[test]
    fn rejects_zero_count() {
        assert!(generate_dataset(&small(0), &markov(4), 0).is_err());
        assert!(generate_dataset(&small(0), &markov(3), 1).is_err());
    }
}
