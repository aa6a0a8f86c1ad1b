use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iq::{IqObservation, SubbandLayout};

/// Energy in each sub-channel's block of one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct BandEnergies(pub Vec<f64>);

impl BandEnergies {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Hann-windowed unitary FFT followed by per-block energy sums.
#[derive(Clone)]
pub struct BandAnalyzer {
    layout: SubbandLayout,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    owner: Vec<Option<usize>>,
}

impl std::fmt::Debug for BandAnalyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BandAnalyzer").field("layout", &self.layout).finish()
    }
}

impl BandAnalyzer {
    pub fn new(layout: SubbandLayout) -> Self {
        let n = layout.n;
        let raw: Vec<f64> = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect();
        // unit mean-square keeps white-noise band energy equal to bin count
        let rms = (raw.iter().map(|w| w * w).sum::<f64>() / n as f64).sqrt();
        let scale = 1.0 / (rms * (n as f64).sqrt());
        let window = raw.iter().map(|w| w * scale).collect();
        Self {
            layout,
            fft: FftPlanner::new().plan_fft_forward(n),
            window,
            owner: layout.band_of_bins(),
        }
    }

    pub fn layout(&self) -> &SubbandLayout {
        &self.layout
    }

    pub fn band_energies(&self, observation: &IqObservation) -> Result<BandEnergies> {
        if observation.samples.len() != self.layout.n {
            return Err(Error::DimensionMismatch {
                context: "observation length",
                expected: self.layout.n,
                actual: observation.samples.len(),
            });
        }
        let mut buf: Vec<Complex<f64>> = observation
            .samples
            .iter()
            .zip(&self.window)
            .map(|(s, w)| Complex::new(f64::from(s.re) * w, f64::from(s.im) * w))
            .collect();
        self.fft.process(&mut buf);
        let mut energies = vec![0.0; self.layout.num_subchannels];
        for (bin, v) in buf.iter().enumerate() {
            if let Some(band) = self.owner[bin] {
                energies[band] += v.norm_sqr();
            }
        }
        Ok(BandEnergies(energies))
    }
}

/// Convenience wrapper building a one-off analyzer.
pub fn band_energies(observation: &IqObservation, layout: &SubbandLayout) -> Result<BandEnergies> {
    BandAnalyzer::new(*layout).band_energies(observation)
}

/// What the classifier sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputMode {
    /// Interleaved (re, im) samples, `2N` features.
    RawIq,
    /// Band energies in dB, `M` features.
    BandEnergy,
}

impl InputMode {
    pub fn width(self, layout: &SubbandLayout) -> usize {
        match self {
            InputMode::RawIq => 2 * layout.n,
            InputMode::BandEnergy => layout.num_subchannels,
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            InputMode::RawIq => 0,
            InputMode::BandEnergy => 1,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(InputMode::RawIq),
            1 => Some(InputMode::BandEnergy),
            _ => None,
        }
    }
}

const ENERGY_FLOOR: f64 = 1e-9;

/// Unstandardized feature matrix, one row per observation.
pub fn feature_matrix(
    observations: &[&IqObservation],
    mode: InputMode,
    analyzer: &BandAnalyzer,
) -> Result<Array2<f64>> {
    let width = mode.width(analyzer.layout());
    let mut out = Array2::zeros((observations.len(), width));
    for (mut row, obs) in out.rows_mut().into_iter().zip(observations) {
        match mode {
            InputMode::RawIq => {
                if obs.samples.len() * 2 != width {
                    return Err(Error::DimensionMismatch {
                        context: "observation length",
                        expected: width / 2,
                        actual: obs.samples.len(),
                    });
                }
                for (i, s) in obs.samples.iter().enumerate() {
                    row[2 * i] = f64::from(s.re);
                    row[2 * i + 1] = f64::from(s.im);
                }
            }
            InputMode::BandEnergy => {
                let e = analyzer.band_energies(obs)?;
                for (dst, v) in row.iter_mut().zip(e.0) {
                    *dst = 10.0 * (v + ENERGY_FLOOR).log10();
                }
            }
        }
    }
    Ok(out)
}

/// Per-feature affine standardization fitted on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Standardizer {
    pub fn fit(features: &Array2<f64>) -> Self {
        let mean = features.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(features.ncols()));
        let std = features
            .std_axis(Axis(0), 0.0)
            .mapv(|s| if s > 1e-8 { s } else { 1.0 });
        Self { mean, std }
    }

    pub fn apply(&self, features: &mut Array2<f64>) {
        *features -= &self.mean;
        *features /= &self.std;
    }
}
