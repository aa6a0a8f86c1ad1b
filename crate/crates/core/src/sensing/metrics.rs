use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrum::OccupancyVector;

/// Confusion counts pooled over every (observation, sub-channel) cell.
///
/// Scores with a zero denominator are NaN; use the `*_defined` accessors
/// to tell them apart from genuine values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensingMetrics {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        f64::NAN
    } else {
        num as f64 / den as f64
    }
}

impl SensingMetrics {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self {
            tp,
            fp,
            fn_,
            tn,
            micro_precision: ratio(tp, tp + fp),
            micro_recall: ratio(tp, tp + fn_),
            micro_f1: ratio(2 * tp, 2 * tp + fp + fn_),
        }
    }

    pub fn precision_defined(&self) -> bool {
        self.tp + self.fp > 0
    }

    pub fn recall_defined(&self) -> bool {
        self.tp + self.fn_ > 0
    }

    pub fn f1_defined(&self) -> bool {
        self.tp + self.fp + self.fn_ > 0
    }

    /// Combines counts from disjoint shards.
    pub fn merge(&self, other: &SensingMetrics) -> SensingMetrics {
        Self::from_counts(
            self.tp + other.tp,
            self.fp + other.fp,
            self.fn_ + other.fn_,
            self.tn + other.tn,
        )
    }

    pub fn cells(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Micro-averaged precision/recall/F1 with `positive_class` (0 = vacant,
/// the default detection target) as the positive label.
pub fn micro_metrics(
    predictions: &[OccupancyVector],
    truths: &[OccupancyVector],
    positive_class: u8,
) -> Result<SensingMetrics> {
    if predictions.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            context: "prediction count",
            expected: truths.len(),
            actual: predictions.len(),
        });
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (p, t) in predictions.iter().zip(truths) {
        if p.len() != t.len() {
            return Err(Error::DimensionMismatch {
                context: "prediction length",
                expected: t.len(),
                actual: p.len(),
            });
        }
        for (&pb, &tb) in p.bits().iter().zip(t.bits()) {
            match (pb == positive_class, tb == positive_class) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
    }
    Ok(SensingMetrics::from_counts(tp, fp, fn_, tn))
}

/// F1 of the best constant predictor on `truths`: always predicting the
/// positive class (any other constant scores 0).
pub fn constant_predictor_f1(truths: &[OccupancyVector], positive_class: u8) -> f64 {
    let cells: usize = truths.iter().map(OccupancyVector::len).sum();
    let positives = truths
        .iter()
        .flat_map(|t| t.bits().iter())
        .filter(|&&b| b == positive_class)
        .count();
    if cells == 0 {
        return f64::NAN;
    }
    2.0 * positives as f64 / (positives + cells) as f64
}
