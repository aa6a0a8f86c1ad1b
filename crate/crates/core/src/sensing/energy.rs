use crate::error::{Error, Result};
use crate::spectrum::OccupancyVector;

use super::features::BandEnergies;

/// Bit `m` is busy iff `energies[m] ≥ thresholds[m]`.
pub fn energy_detect(features: &BandEnergies, thresholds: &[f64]) -> Result<OccupancyVector> {
    if thresholds.len() != features.len() {
        return Err(Error::DimensionMismatch {
            context: "thresholds",
            expected: features.len(),
            actual: thresholds.len(),
        });
    }
    Ok(OccupancyVector::from_bools(
        features.0.iter().zip(thresholds).map(|(e, t)| e >= t),
    ))
}

#[derive(Debug, Clone, Copy, Default)]
struct Counts {
    tp: u64,
    fp: u64,
    fn_: u64,
}

impl Counts {
    fn f1(&self) -> f64 {
        let den = 2 * self.tp + self.fp + self.fn_;
        if den == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / den as f64
        }
    }

    fn add(&self, o: Counts) -> Counts {
        Counts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

fn channel_counts(
    features: &[BandEnergies],
    labels: &[OccupancyVector],
    m: usize,
    threshold: f64,
    positive: u8,
) -> Counts {
    let mut c = Counts::default();
    for (f, l) in features.iter().zip(labels) {
        let pred = u8::from(f.0[m] >= threshold);
        let truth = l.bit(m);
        match (pred == positive, truth == positive) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            _ => {}
        }
    }
    c
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per-channel thresholds maximizing pooled F1 on labeled energies.
///
/// Starts from per-channel medians and sweeps each channel's threshold over
/// the midpoints between its sorted observed energies, holding the other
/// channels fixed. A candidate replaces the current threshold only when it
/// strictly improves F1. Channels where only one class occurs get `+∞`.
pub fn calibrate_thresholds(
    features: &[BandEnergies],
    labels: &[OccupancyVector],
    positive_class: u8,
) -> Result<Vec<f64>> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(Error::DimensionMismatch {
            context: "calibration set",
            expected: labels.len(),
            actual: features.len(),
        });
    }
    let m = labels[0].len();
    if let Some(bad) = features.iter().find(|f| f.len() != m) {
        return Err(Error::DimensionMismatch {
            context: "band energies",
            expected: m,
            actual: bad.len(),
        });
    }

    let mut thresholds = Vec::with_capacity(m);
    let mut active = Vec::with_capacity(m);
    for ch in 0..m {
        let busy = labels.iter().filter(|l| l.bit(ch) == 1).count();
        if busy == 0 || busy == labels.len() {
            log::warn!("channel {ch}: only one class in calibration data, threshold set to +inf");
            thresholds.push(f64::INFINITY);
            active.push(false);
        } else {
            let mut e: Vec<f64> = features.iter().map(|f| f.0[ch]).collect();
            thresholds.push(median(&mut e));
            active.push(true);
        }
    }

    let mut per_channel: Vec<Counts> = (0..m)
        .map(|ch| channel_counts(features, labels, ch, thresholds[ch], positive_class))
        .collect();

    for _pass in 0..2 {
        for ch in (0..m).filter(|&ch| active[ch]) {
            let others = per_channel
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != ch)
                .fold(Counts::default(), |acc, (_, c)| acc.add(*c));
            let mut best_f1 = others.add(per_channel[ch]).f1();

            let mut cells: Vec<(f64, u8)> = features
                .iter()
                .zip(labels)
                .map(|(f, l)| (f.0[ch], l.bit(ch)))
                .collect();
            cells.sort_by(|a, b| a.0.total_cmp(&b.0));
            let n = cells.len();
            let total_pos_truth = cells.iter().filter(|c| c.1 == positive_class).count() as u64;

            // first i cells predicted vacant (below threshold), rest busy
            let (mut vac_pos, mut vac_neg) = (0u64, 0u64);
            for i in 0..=n {
                if i > 0 {
                    if cells[i - 1].1 == positive_class {
                        vac_pos += 1;
                    } else {
                        vac_neg += 1;
                    }
                }
                if i > 0 && i < n && cells[i].0 == cells[i - 1].0 {
                    continue;
                }
                let busy_pos = total_pos_truth - vac_pos;
                let busy_neg = (n as u64 - i as u64) - busy_pos;
                let c = if positive_class == 0 {
                    Counts {
                        tp: vac_pos,
                        fp: vac_neg,
                        fn_: busy_pos,
                    }
                } else {
                    Counts {
                        tp: busy_pos,
                        fp: busy_neg,
                        fn_: vac_pos,
                    }
                };
                let f1 = others.add(c).f1();
                if f1 > best_f1 {
                    best_f1 = f1;
                    thresholds[ch] = if i == 0 {
                        cells[0].0
                    } else if i == n {
                        f64::INFINITY
                    } else {
                        0.5 * (cells[i - 1].0 + cells[i].0)
                    };
                    per_channel[ch] = c;
                }
            }
        }
    }
    Ok(thresholds)
}
