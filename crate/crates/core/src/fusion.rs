//! n-out-of-N hard-decision fusion of per-UAV occupancy reports.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::spectrum::OccupancyVector;

/// Declare a channel vacant iff at least `n` of the `num_reports` reports
/// call it vacant. `n = 1` is the OR rule, `n = num_reports` the AND rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionRule {
    n: usize,
    num_reports: usize,
}

impl FusionRule {
    pub fn new(n: usize, num_reports: usize) -> Result<Self> {
        if n == 0 || n > num_reports {
            return Err(invalid(
                "fusion n",
                format!("vote threshold {n} outside [1, {num_reports}]"),
            ));
        }
        Ok(Self { n, num_reports })
    }

    /// Majority vote, `n = ⌊K/2⌋ + 1`.
    pub fn majority(num_reports: usize) -> Result<Self> {
        Self::new(num_reports / 2 + 1, num_reports)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_reports(&self) -> usize {
        self.num_reports
    }
}

fn vacancy_votes(reports: &[OccupancyVector], expected_reports: usize) -> Result<Vec<usize>> {
    if reports.len() != expected_reports || reports.is_empty() {
        return Err(Error::DimensionMismatch {
            context: "fusion report count",
            expected: expected_reports,
            actual: reports.len(),
        });
    }
    let m = reports[0].len();
    let mut votes = vec![0usize; m];
    for report in reports {
        if report.len() != m {
            return Err(Error::DimensionMismatch {
                context: "fusion report length",
                expected: m,
                actual: report.len(),
            });
        }
        for (v, &bit) in votes.iter_mut().zip(report.bits()) {
            *v += usize::from(bit == 0);
        }
    }
    Ok(votes)
}

fn decide(votes: &[usize], n: usize) -> OccupancyVector {
    OccupancyVector::from_bools(votes.iter().map(|&v| v < n))
}

pub fn fuse(reports: &[OccupancyVector], rule: &FusionRule) -> Result<OccupancyVector> {
    let votes = vacancy_votes(reports, rule.num_reports)?;
    Ok(decide(&votes, rule.n))
}

/// Fused vectors for every `n` in `1..=K`, from a single vote count.
pub fn fusion_table(reports: &[OccupancyVector]) -> Result<Vec<OccupancyVector>> {
    let votes = vacancy_votes(reports, reports.len())?;
    Ok((1..=reports.len()).map(|n| decide(&votes, n)).collect())
}

/// Fuses whatever reports arrived. Missing reports shrink N for this slot
/// and the threshold is clamped to the reports present; with no reports at
/// all every channel is treated as busy.
pub fn fuse_available(
    reports: &[Option<OccupancyVector>],
    rule: &FusionRule,
    num_channels: usize,
) -> Result<OccupancyVector> {
    let present: Vec<OccupancyVector> = reports.iter().flatten().cloned().collect();
    if present.len() == rule.num_reports {
        return fuse(&present, rule);
    }
    log::warn!(
        "fusing {} of {} expected reports",
        present.len(),
        rule.num_reports
    );
    if present.is_empty() {
        return Ok(OccupancyVector::busy(num_channels));
    }
    let n = rule.n.min(present.len());
    fuse(&present, &FusionRule::new(n, present.len())?)
}
