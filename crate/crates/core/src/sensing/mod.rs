//! Per-UAV occupancy detection from one wideband capture.

mod classifier;
mod energy;
mod features;
mod metrics;

pub use classifier::{
    calibrate_energy_detector, read_model, train_classifier, write_model, ClassifierParams,
    Detector, SensingModel, TrainingCurve,
};
pub use energy::{calibrate_thresholds, energy_detect};
pub use features::{band_energies, feature_matrix, BandAnalyzer, BandEnergies, InputMode, Standardizer};
pub use metrics::{constant_predictor_f1, micro_metrics, SensingMetrics};
