//! Sensing model checkpoint layout (little-endian):
//!
//! ```text
//! magic     4 bytes "SKSM"
//! version   u32     1
//! kind      u32     0 = energy threshold, 1 = dense classifier
//! layout    u32 N, u32 M, u32 subcarriers per sub-channel
//! decision  f64     decision threshold
//! kind 0:   M × f64 thresholds
//! kind 1:   u32 input mode (0 = raw I/Q, 1 = band energy), u32 width,
//!           width × f64 means, width × f64 scales, then an SKNN network
//! ```

use std::io::{Read, Write};

use ndarray::{s, Array1, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::energy::{calibrate_thresholds, energy_detect};
use super::features::{feature_matrix, BandAnalyzer, InputMode, Standardizer};
use crate::dataset::{Dataset, SplitPart};
use crate::error::{invalid, Error, Result};
use crate::iq::{IqObservation, SubbandLayout};
use crate::nn::{
    read_network, write_network, Activation, LossSpec, Network, Optimizer, OptimizerKind,
};
use crate::rng::{domain, substream};
use crate::spectrum::OccupancyVector;

const MAGIC: &[u8; 4] = b"SKSM";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Detector {
    EnergyThreshold {
        thresholds: Vec<f64>,
    },
    DenseClassifier {
        network: Network,
        standardizer: Standardizer,
        input_mode: InputMode,
    },
}

/// A detector bound to the sub-band layout it was built for.
#[derive(Debug, Clone)]
pub struct SensingModel {
    detector: Detector,
    decision_threshold: f64,
    analyzer: BandAnalyzer,
}

impl PartialEq for SensingModel {
    fn eq(&self, other: &Self) -> bool {
        self.detector == other.detector
            && self.decision_threshold == other.decision_threshold
            && self.analyzer.layout() == other.analyzer.layout()
    }
}

impl SensingModel {
    pub fn new(layout: SubbandLayout, detector: Detector, decision_threshold: f64) -> Result<Self> {
        if !(decision_threshold > 0.0 && decision_threshold < 1.0) {
            return Err(invalid("decision_threshold", "must lie in (0, 1)"));
        }
        let m = layout.num_subchannels;
        match &detector {
            Detector::EnergyThreshold { thresholds } => {
                if thresholds.len() != m {
                    return Err(Error::DimensionMismatch {
                        context: "thresholds",
                        expected: m,
                        actual: thresholds.len(),
                    });
                }
            }
            Detector::DenseClassifier {
                network,
                standardizer,
                input_mode,
            } => {
                let width = input_mode.width(&layout);
                if network.output_dim() != m {
                    return Err(Error::DimensionMismatch {
                        context: "classifier output",
                        expected: m,
                        actual: network.output_dim(),
                    });
                }
                if network.output_activation() != Activation::Sigmoid {
                    return Err(invalid("network", "classifier head must be sigmoid"));
                }
                if network.input_dim() != width || standardizer.mean.len() != width {
                    return Err(Error::DimensionMismatch {
                        context: "classifier input",
                        expected: width,
                        actual: network.input_dim(),
                    });
                }
            }
        }
        Ok(Self {
            detector,
            decision_threshold,
            analyzer: BandAnalyzer::new(layout),
        })
    }

    /// Classifier with freshly initialized weights and identity scaling.
    pub fn untrained(
        layout: SubbandLayout,
        input_mode: InputMode,
        hidden: &[usize],
        seed: u64,
    ) -> Result<Self> {
        let width = input_mode.width(&layout);
        let mut dims = vec![width];
        dims.extend_from_slice(hidden);
        dims.push(layout.num_subchannels);
        let mut rng = substream(seed, domain::INIT, 0);
        let network = Network::new(&dims, Activation::Relu, Activation::Sigmoid, &mut rng)?;
        let standardizer = Standardizer {
            mean: Array1::zeros(width),
            std: Array1::ones(width),
        };
        Self::new(
            layout,
            Detector::DenseClassifier {
                network,
                standardizer,
                input_mode,
            },
            0.5,
        )
    }

    pub fn detector(&self) -> &Detector {
        &self.detector
    }

    pub fn layout(&self) -> &SubbandLayout {
        self.analyzer.layout()
    }

    pub fn decision_threshold(&self) -> f64 {
        self.decision_threshold
    }

    pub fn kind_name(&self) -> &'static str {
        match self.detector {
            Detector::EnergyThreshold { .. } => "energy-threshold",
            Detector::DenseClassifier { .. } => "dense-classifier",
        }
    }

    pub fn predict_occupancy(&self, observation: &IqObservation) -> Result<OccupancyVector> {
        Ok(self.predict_batch(&[observation])?.remove(0))
    }

    /// Per-channel busy probabilities; energy detectors return 0 or 1.
    pub fn scores(&self, observations: &[&IqObservation]) -> Result<Array2<f64>> {
        let m = self.layout().num_subchannels;
        match &self.detector {
            Detector::EnergyThreshold { thresholds } => {
                let mut out = Array2::zeros((observations.len(), m));
                for (mut row, obs) in out.rows_mut().into_iter().zip(observations) {
                    let e = self.analyzer.band_energies(obs)?;
                    let bits = energy_detect(&e, thresholds)?;
                    for (dst, &b) in row.iter_mut().zip(bits.bits()) {
                        *dst = f64::from(b);
                    }
                }
                Ok(out)
            }
            Detector::DenseClassifier {
                network,
                standardizer,
                input_mode,
            } => {
                let mut x = feature_matrix(observations, *input_mode, &self.analyzer)?;
                standardizer.apply(&mut x);
                network.forward_batch(x.view())
            }
        }
    }

    pub fn predict_batch(&self, observations: &[&IqObservation]) -> Result<Vec<OccupancyVector>> {
        let scores = self.scores(observations)?;
        let cut = match self.detector {
            Detector::EnergyThreshold { .. } => 0.5,
            Detector::DenseClassifier { .. } => self.decision_threshold,
        };
        Ok(scores
            .rows()
            .into_iter()
            .map(|row| OccupancyVector::from_bools(row.iter().map(|&p| p >= cut)))
            .collect())
    }
}

/// Thresholds fitted on the validation split of one UAV stream.
pub fn calibrate_energy_detector(dataset: &Dataset, uav: usize, positive_class: u8) -> Result<SensingModel> {
    let layout = dataset.config.layout();
    let analyzer = BandAnalyzer::new(layout);
    let obs = dataset.part(SplitPart::Validation, uav);
    if obs.is_empty() {
        return Err(invalid("dataset", "validation split is empty"));
    }
    let features = obs
        .iter()
        .map(|o| analyzer.band_energies(o))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<OccupancyVector> = obs.iter().map(|o| o.label.clone()).collect();
    let thresholds = calibrate_thresholds(&features, &labels, positive_class)?;
    SensingModel::new(layout, Detector::EnergyThreshold { thresholds }, 0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierParams {
    pub input_mode: InputMode,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub decision_threshold: f64,
    pub seed: u64,
    /// Which UAV stream of the dataset to train on.
    pub uav: usize,
}

impl Default for ClassifierParams {
    fn default() -> Self {
        Self {
            input_mode: InputMode::BandEnergy,
            hidden: vec![128, 128],
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            decision_threshold: 0.5,
            seed: 0,
            uav: 0,
        }
    }
}

impl ClassifierParams {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(invalid("epochs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate", "must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(invalid("hidden", "layer widths must be positive"));
        }
        if !(self.decision_threshold > 0.0 && self.decision_threshold < 1.0) {
            return Err(invalid("decision_threshold", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Mean training loss per epoch, plus validation loss when a validation
/// split exists.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingCurve {
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
}

fn label_matrix(obs: &[&IqObservation], m: usize) -> Array2<f64> {
    let mut y = Array2::zeros((obs.len(), m));
    for (mut row, o) in y.rows_mut().into_iter().zip(obs) {
        for (dst, &b) in row.iter_mut().zip(o.label.bits()) {
            *dst = f64::from(b);
        }
    }
    y
}

fn gather(x: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), x.ncols()));
    for (mut dst, &r) in out.rows_mut().into_iter().zip(rows) {
        dst.assign(&x.row(r));
    }
    out
}

/// Trains a sigmoid multi-label classifier with per-channel binary
/// cross-entropy on the training split of `params.uav`'s stream.
pub fn train_classifier(dataset: &Dataset, params: &ClassifierParams) -> Result<(SensingModel, TrainingCurve)> {
    params.validate()?;
    if params.uav >= dataset.num_uavs {
        return Err(Error::IndexOutOfRange {
            context: "dataset uav",
            index: params.uav,
            size: dataset.num_uavs,
        });
    }
    let layout = dataset.config.layout();
    let m = layout.num_subchannels;
    let analyzer = BandAnalyzer::new(layout);
    let train = dataset.part(SplitPart::Train, params.uav);
    if train.is_empty() {
        return Err(invalid("dataset", "training split is empty"));
    }
    let mut x = feature_matrix(&train, params.input_mode, &analyzer)?;
    let standardizer = Standardizer::fit(&x);
    standardizer.apply(&mut x);
    let y = label_matrix(&train, m);

    let validation = dataset.part(SplitPart::Validation, params.uav);
    let val = if validation.is_empty() {
        None
    } else {
        let mut vx = feature_matrix(&validation, params.input_mode, &analyzer)?;
        standardizer.apply(&mut vx);
        Some((vx, label_matrix(&validation, m)))
    };

    let mut dims = vec![params.input_mode.width(&layout)];
    dims.extend_from_slice(&params.hidden);
    dims.push(m);
    let mut init_rng = substream(params.seed, domain::INIT, 0);
    let mut network = Network::new(&dims, Activation::Relu, Activation::Sigmoid, &mut init_rng)?;
    let mut optimizer = Optimizer::new(OptimizerKind::adam(), params.learning_rate, &network)?;
    let loss = LossSpec::BinaryCrossEntropy;

    let mut curve = TrainingCurve::default();
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    for epoch in 0..params.epochs {
        let mut rng = substream(params.seed, domain::TRAINING, epoch as u64);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch, rows) in order.chunks(params.batch_size).enumerate() {
            let bx = gather(&x, rows);
            let by = gather(&y, rows);
            let (l, grads) = network.loss_and_gradients(bx.view(), by.view(), &loss)?;
            if !l.is_finite() {
                log::error!("non-finite loss {l} at epoch {epoch}, batch {batch}");
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            total += l * rows.len() as f64;
            optimizer.step(&mut network, &grads);
        }
        let mean = total / x.nrows() as f64;
        curve.train_loss.push(mean);
        if let Some((vx, vy)) = &val {
            let (vl, _) = network.loss_and_gradients(vx.slice(s![.., ..]), vy.view(), &loss)?;
            curve.validation_loss.push(vl);
        }
        log::debug!("epoch {epoch}: train loss {mean:.5}");
    }

    let model = SensingModel::new(
        layout,
        Detector::DenseClassifier {
            network,
            standardizer,
            input_mode: params.input_mode,
        },
        params.decision_threshold,
    )?;
    Ok((model, curve))
}

fn bad(reason: impl Into<String>) -> Error {
    Error::Format {
        what: "sensing model",
        reason: reason.into(),
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn write_model<W: Write>(model: &SensingModel, w: &mut W) -> Result<()> {
    let layout = model.layout();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let kind: u32 = match model.detector {
        Detector::EnergyThreshold { .. } => 0,
        Detector::DenseClassifier { .. } => 1,
    };
    w.write_all(&kind.to_le_bytes())?;
    for v in [layout.n, layout.num_subchannels, layout.subcarriers] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    w.write_all(&model.decision_threshold.to_le_bytes())?;
    match &model.detector {
        Detector::EnergyThreshold { thresholds } => {
            for t in thresholds {
                w.write_all(&t.to_le_bytes())?;
            }
        }
        Detector::DenseClassifier {
            network,
            standardizer,
            input_mode,
        } => {
            w.write_all(&input_mode.code().to_le_bytes())?;
            w.write_all(&(standardizer.mean.len() as u32).to_le_bytes())?;
            for v in standardizer.mean.iter().chain(standardizer.std.iter()) {
                w.write_all(&v.to_le_bytes())?;
            }
            write_network(network, w)?;
        }
    }
    Ok(())
}

pub fn read_model<R: Read>(r: &mut R) -> Result<SensingModel> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let kind = read_u32(r)?;
    let n = read_u32(r)? as usize;
    let m = read_u32(r)? as usize;
    let sub = read_u32(r)? as usize;
    if n == 0 || !n.is_power_of_two() || m == 0 || m > 32 || sub == 0 || m * sub > n {
        return Err(bad(format!("bad layout N={n} M={m} S={sub}")));
    }
    let layout = SubbandLayout::new(n, m, sub);
    let decision = read_f64(r)?;
    let detector = match kind {
        0 => Detector::EnergyThreshold {
            thresholds: (0..m).map(|_| read_f64(r)).collect::<Result<_>>()?,
        },
        1 => {
            let input_mode = InputMode::from_code(read_u32(r)?).ok_or_else(|| bad("unknown input mode"))?;
            let width = read_u32(r)? as usize;
            if width != input_mode.width(&layout) {
                return Err(bad(format!("feature width {width} does not match layout")));
            }
            let mean = (0..width).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
            let std = (0..width).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
            let network = read_network(r)?;
            Detector::DenseClassifier {
                network,
                standardizer: Standardizer {
                    mean: Array1::from(mean),
                    std: Array1::from(std),
                },
                input_mode,
            }
        }
        k => return Err(bad(format!("unknown model kind {k}"))),
    };
    SensingModel::new(layout, detector, decision).map_err(|e| bad(e.to_string()))
}
