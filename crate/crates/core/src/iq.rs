//! Synthetic wideband I/Q captures.
//!
//! An observation is one OFDM-like symbol of `N` samples. Sub-channel `m`
//! owns a contiguous block of subcarriers; a busy sub-channel fills its
//! block with QPSK symbols, a vacant one leaves it empty. Unused
//! subcarriers split evenly into guard bands on both edges. Noise is
//! circular complex Gaussian with unit variance per sample, so the
//! per-subcarrier signal power equals the linear SINR.

use std::sync::Arc;

use num_complex::{Complex, Complex32};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::channel::db_to_linear;
use crate::error::{invalid, Error, Result};
use crate::spectrum::OccupancyVector;

pub type C64 = Complex<f64>;

/// Noise variance per complex sample.
pub const REFERENCE_NOISE_POWER: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub num_subchannels: usize,
    pub samples_per_observation: usize,
    pub subcarriers_per_subchannel: usize,
    pub sinr_grid_db: Vec<f64>,
    /// Neighbor-cell gains relative to the serving cell (dB).
    #[serde(default)]
    pub interference_gains_db: Vec<f64>,
    pub seed: u64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
}

fn default_train_fraction() -> f64 {
    0.70
}

fn default_validation_fraction() -> f64 {
    0.15
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_subchannels: 16,
            samples_per_observation: 1024,
            subcarriers_per_subchannel: 60,
            sinr_grid_db: vec![-10.0, 0.0, 10.0, 20.0],
            interference_gains_db: Vec::new(),
            seed: 0,
            train_fraction: default_train_fraction(),
            validation_fraction: default_validation_fraction(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.samples_per_observation;
        if n == 0 || !n.is_power_of_two() {
            return Err(invalid("samples_per_observation", format!("{n} is not a power of two")));
        }
        if self.num_subchannels == 0 || self.num_subchannels > 32 {
            return Err(invalid("num_subchannels", "must be in 1..=32"));
        }
        if self.subcarriers_per_subchannel == 0 {
            return Err(invalid("subcarriers_per_subchannel", "must be >= 1"));
        }
        if self.num_subchannels * self.subcarriers_per_subchannel > n {
            return Err(invalid(
                "subcarriers_per_subchannel",
                format!(
                    "{} × {} subcarriers exceed N = {n}",
                    self.num_subchannels, self.subcarriers_per_subchannel
                ),
            ));
        }
        if self.sinr_grid_db.is_empty() || !self.sinr_grid_db.iter().all(|v| v.is_finite()) {
            return Err(invalid("sinr_grid_db", "must be a non-empty list of finite values"));
        }
        if self.interference_gains_db.iter().any(|g| g.is_nan()) {
            return Err(invalid("interference_gains_db", "NaN gain"));
        }
        let (t, v) = (self.train_fraction, self.validation_fraction);
        if !(t > 0.0 && v >= 0.0 && t + v <= 1.0) {
            return Err(invalid("train_fraction", format!("bad split fractions {t} / {v}")));
        }
        Ok(())
    }

    pub fn layout(&self) -> SubbandLayout {
        SubbandLayout::new(
            self.samples_per_observation,
            self.num_subchannels,
            self.subcarriers_per_subchannel,
        )
    }
}

/// Placement of sub-channel blocks on the FFT grid.
///
/// Logical subcarrier `j` runs from the lowest to the highest frequency and
/// maps to FFT bin `(j + N/2) mod N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubbandLayout {
    pub n: usize,
    pub num_subchannels: usize,
    pub subcarriers: usize,
}

impl SubbandLayout {
    pub fn new(n: usize, num_subchannels: usize, subcarriers: usize) -> Self {
        Self {
            n,
            num_subchannels,
            subcarriers,
        }
    }

    fn offset(&self) -> usize {
        (self.n - self.num_subchannels * self.subcarriers) / 2
    }

    /// FFT bins carrying sub-channel `band`.
    pub fn bins(&self, band: usize) -> impl Iterator<Item = usize> + '_ {
        let start = self.offset() + band * self.subcarriers;
        (start..start + self.subcarriers).map(move |j| (j + self.n / 2) % self.n)
    }

    /// Sub-channel owning each FFT bin, `None` for guard bins.
    pub fn band_of_bins(&self) -> Vec<Option<usize>> {
        let mut owner = vec![None; self.n];
        for band in 0..self.num_subchannels {
            for bin in self.bins(band) {
                owner[bin] = Some(band);
            }
        }
        owner
    }
}

/// One capture by one UAV.
#[derive(Debug, Clone, PartialEq)]
pub struct IqObservation {
    pub samples: Vec<Complex32>,
    pub label: OccupancyVector,
    pub sinr_db: f32,
    pub uav_index: usize,
}

/// Noise-free signal and noise of one synthesis, before quantization.
#[derive(Debug, Clone)]
pub struct SynthesisParts {
    /// Frequency-domain symbols, indexed by FFT bin.
    pub spectrum: Vec<C64>,
    pub signal: Vec<C64>,
    pub noise: Vec<C64>,
}

/// Synthesizer with cached FFT plans for one layout.
#[derive(Clone)]
pub struct Synthesizer {
    layout: SubbandLayout,
    ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Synthesizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Synthesizer").field("layout", &self.layout).finish()
    }
}

fn qpsk<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let bits: u8 = rng.random_range(0..4);
    C64::new(
        if bits & 1 == 0 { s } else { -s },
        if bits & 2 == 0 { s } else { -s },
    )
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let sd = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re * sd, im * sd)
}

impl Synthesizer {
    pub fn new(layout: SubbandLayout) -> Self {
        let ifft = FftPlanner::new().plan_fft_inverse(layout.n);
        Self { layout, ifft }
    }

    pub fn from_config(config: &SynthConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self::new(config.layout()))
    }

    pub fn layout(&self) -> &SubbandLayout {
        &self.layout
    }

    fn check_label(&self, label: &OccupancyVector) -> Result<()> {
        if label.len() != self.layout.num_subchannels {
            return Err(Error::DimensionMismatch {
                context: "label length",
                expected: self.layout.num_subchannels,
                actual: label.len(),
            });
        }
        Ok(())
    }

    /// Unit-normalized time waveform of `label` with per-subcarrier power
    /// `power`, returned with its spectrum.
    fn waveform<R: Rng + ?Sized>(
        &self,
        label: &OccupancyVector,
        power: f64,
        rng: &mut R,
    ) -> (Vec<C64>, Vec<C64>) {
        let n = self.layout.n;
        let amp = power.sqrt();
        let mut spectrum = vec![C64::new(0.0, 0.0); n];
        for band in 0..self.layout.num_subchannels {
            if label.bit(band) == 1 {
                for bin in self.layout.bins(band) {
                    spectrum[bin] = qpsk(rng) * amp;
                }
            }
        }
        let mut time = spectrum.clone();
        self.ifft.process(&mut time);
        let scale = 1.0 / (n as f64).sqrt();
        time.iter_mut().for_each(|v| *v *= scale);
        (spectrum, time)
    }

    pub fn synthesize_parts<R: Rng + ?Sized>(
        &self,
        label: &OccupancyVector,
        sinr_db: f64,
        rng: &mut R,
    ) -> Result<SynthesisParts> {
        self.check_label(label)?;
        if !sinr_db.is_finite() {
            return Err(invalid("sinr_db", "must be finite"));
        }
        let power = db_to_linear(sinr_db) * REFERENCE_NOISE_POWER;
        let (spectrum, signal) = self.waveform(label, power, rng);
        let noise = (0..self.layout.n)
            .map(|_| complex_gaussian(rng, REFERENCE_NOISE_POWER))
            .collect();
        Ok(SynthesisParts {
            spectrum,
            signal,
            noise,
        })
    }

    pub fn synthesize<R: Rng + ?Sized>(
        &self,
        label: &OccupancyVector,
        sinr_db: f64,
        rng: &mut R,
    ) -> Result<IqObservation> {
        let parts = self.synthesize_parts(label, sinr_db, rng)?;
        let samples = parts
            .signal
            .iter()
            .zip(&parts.noise)
            .map(|(s, w)| {
                let v = s + w;
                Complex32::new(v.re as f32, v.im as f32)
            })
            .collect();
        Ok(IqObservation {
            samples,
            label: label.clone(),
            sinr_db: sinr_db as f32,
            uav_index: 0,
        })
    }

    /// Adds neighbor-cell transmissions at `gains_db` relative to the
    /// serving cell's subcarrier power. A gain of −∞ skips that neighbor.
    pub fn add_interference<R: Rng + ?Sized>(
        &self,
        observation: &IqObservation,
        neighbor_labels: &[OccupancyVector],
        gains_db: &[f64],
        rng: &mut R,
    ) -> Result<IqObservation> {
        if neighbor_labels.len() != gains_db.len() {
            return Err(Error::DimensionMismatch {
                context: "interference gains",
                expected: neighbor_labels.len(),
                actual: gains_db.len(),
            });
        }
        let mut out = observation.clone();
        let serving = db_to_linear(f64::from(observation.sinr_db)) * REFERENCE_NOISE_POWER;
        for (label, &gain) in neighbor_labels.iter().zip(gains_db) {
            if gain == f64::NEG_INFINITY {
                continue;
            }
            self.check_label(label)?;
            let (_, wave) = self.waveform(label, serving * db_to_linear(gain), rng);
            for (s, w) in out.samples.iter_mut().zip(&wave) {
                *s += Complex32::new(w.re as f32, w.im as f32);
            }
        }
        Ok(out)
    }
}

/// One-shot form of [`Synthesizer::synthesize`].
pub fn synthesize_observation<R: Rng + ?Sized>(
    label: &OccupancyVector,
    sinr_db: f64,
    config: &SynthConfig,
    rng: &mut R,
) -> Result<IqObservation> {
    Synthesizer::from_config(config)?.synthesize(label, sinr_db, rng)
}

pub fn mean_power(samples: &[Complex32]) -> f64 {
    samples.iter().map(|s| f64::from(s.norm_sqr())).sum::<f64>() / samples.len() as f64
}
