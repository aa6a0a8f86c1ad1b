use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scheduler::{csv_error, TrainingLog};
use crate::sensing::{micro_metrics, SensingMetrics};
use crate::spectrum::{collision_indicator, validate_assignment, OccupancyVector, SlotLedger};

/// A slot ledger with the per-UAV inputs that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub episode: u64,
    pub requests: Vec<bool>,
    pub reports: Vec<OccupancyVector>,
    pub ledger: SlotLedger,
}

/// Aggregates over every slot of a run. Sensing scores treat vacant as
/// the positive class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub agent: String,
    pub slots: u64,
    pub transmissions: u64,
    pub collisions: u64,
    /// Bits, collisions counted negative.
    pub total_utility: f64,
    pub mean_utility: f64,
    /// Joules spent sensing and transmitting.
    pub total_energy: f64,
    pub energy_efficiency: Option<f64>,
    pub collision_rate: Option<f64>,
    pub sensing: Vec<SensingMetrics>,
    pub fused_sensing: SensingMetrics,
}

/// Recomputes every aggregate from the records, in record order.
pub fn summarize(agent: &str, num_uavs: usize, records: &[SlotRecord]) -> Result<RunSummary> {
    let mut total_utility = 0.0;
    let mut total_energy = 0.0;
    let (mut transmissions, mut collisions) = (0u64, 0u64);
    for r in records {
        let l = &r.ledger;
        total_utility += l.utility;
        total_energy += l.sensing_costs.iter().sum::<f64>();
        total_energy += l.transmissions.iter().map(|p| p.access_cost).sum::<f64>();
        transmissions += l.transmissions.len() as u64;
        collisions += l.collisions() as u64;
    }
    let truths: Vec<OccupancyVector> = records.iter().map(|r| r.ledger.true_occupancy.clone()).collect();
    let mut sensing = Vec::with_capacity(num_uavs);
    for uav in 0..num_uavs {
        let mut reports = Vec::with_capacity(records.len());
        for r in records {
            reports.push(r.reports.get(uav).cloned().ok_or(Error::IndexOutOfRange {
                context: "slot reports",
                index: uav,
                size: r.reports.len(),
            })?);
        }
        sensing.push(micro_metrics(&reports, &truths, 0)?);
    }
    let fused: Vec<OccupancyVector> = records.iter().map(|r| r.ledger.fused.clone()).collect();
    let slots = records.len() as u64;
    Ok(RunSummary {
        agent: agent.to_owned(),
        slots,
        transmissions,
        collisions,
        total_utility,
        mean_utility: if slots == 0 { 0.0 } else { total_utility / slots as f64 },
        total_energy,
        energy_efficiency: (total_energy > 0.0).then(|| total_utility / total_energy),
        collision_rate: (transmissions > 0).then(|| collisions as f64 / transmissions as f64),
        sensing,
        fused_sensing: micro_metrics(&fused, &truths, 0)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub slot: u64,
    pub utility: f64,
    pub ee: Option<f64>,
    pub collisions: usize,
    pub holes_detected: usize,
    pub holes_true: usize,
}

/// One line of a sensing-metrics table. `uav` is empty on fused rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensingRow {
    pub uav: Option<usize>,
    pub sinr_db: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fused: bool,
}

impl SensingRow {
    pub fn new(uav: Option<usize>, sinr_db: Option<f64>, metrics: &SensingMetrics) -> Self {
        Self {
            uav,
            sinr_db,
            precision: metrics.micro_precision,
            recall: metrics.micro_recall,
            f1: metrics.micro_f1,
            fused: uav.is_none(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub agent: String,
    pub slots: u64,
    pub transmissions: u64,
    pub collisions: u64,
    pub collision_rate: Option<f64>,
    pub mean_utility: f64,
    pub energy_efficiency: Option<f64>,
    pub fused_precision: f64,
    pub fused_recall: f64,
    pub fused_f1: f64,
}

pub const LEDGER_FILE: &str = "ledger.csv";
pub const SENSING_FILE: &str = "sensing.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const TRAINING_FILE: &str = "training.csv";

#[derive(Debug, Clone)]
pub struct RunReport {
    pub agent: String,
    pub sensing_sinr_db: Vec<f64>,
    pub records: Vec<SlotRecord>,
    pub summary: RunSummary,
    /// Log of the agent training that preceded the run, if any.
    pub training: Option<TrainingLog>,
}

fn same(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits()
}

impl RunReport {
    /// Checks every record for internal consistency and the summary
    /// against a fresh recomputation, exactly.
    pub fn audit(&self) -> Result<()> {
        let k = self.sensing_sinr_db.len();
        let fail = |slot: u64, what: &str| invalid("report", format!("slot {slot}: {what}"));
        let mut prev: Option<&SlotRecord> = None;
        for r in &self.records {
            let l = &r.ledger;
            l.check_invariants()?;
            if r.reports.len() != k || r.requests.len() != k || l.sensing_costs.len() != k {
                return Err(fail(l.slot, "per-UAV fields do not cover every UAV"));
            }
            if !same(l.utility, l.recompute_utility()) {
                return Err(fail(l.slot, "utility differs from recomputation"));
            }
            let ee_matches = match (l.energy_efficiency, l.recompute_energy_efficiency()) {
                (Some(a), Some(b)) => same(a, b),
                (None, None) => true,
                _ => false,
            };
            if !ee_matches {
                return Err(fail(l.slot, "energy efficiency differs from recomputation"));
            }
            validate_assignment(&l.next_assignment, &l.fused).map_err(Error::ConstraintViolation)?;

            let carried = prev.filter(|p| p.episode == r.episode && p.ledger.slot + 1 == l.slot);
            match (carried, &l.allocation_basis) {
                (Some(p), Some(basis)) => {
                    if *basis != p.ledger.fused || l.transmitted_assignment() != p.ledger.next_assignment {
                        return Err(fail(l.slot, "transmissions differ from last slot's allocation"));
                    }
                    for t in &l.transmissions {
                        if t.collision != collision_indicator(l.true_occupancy.bit(t.channel), basis.bit(t.channel)) {
                            return Err(fail(l.slot, "collision indicator mismatch"));
                        }
                    }
                }
                (None, None) if l.transmissions.is_empty() => {}
                _ => return Err(fail(l.slot, "allocation carried across an episode boundary")),
            }
            prev = Some(r);
        }
        let fresh = summarize(&self.agent, k, &self.records)?;
        // Debug output round-trips every f64 and prints NaN scores alike.
        if format!("{fresh:?}") != format!("{:?}", self.summary) {
            return Err(invalid("report", "summary differs from recomputation over the ledgers"));
        }
        Ok(())
    }

    pub fn ledger_rows(&self) -> Vec<LedgerRow> {
        self.records
            .iter()
            .map(|r| LedgerRow {
                slot: r.ledger.slot,
                utility: r.ledger.utility,
                ee: r.ledger.energy_efficiency,
                collisions: r.ledger.collisions(),
                holes_detected: r.ledger.fused.hole_count(),
                holes_true: r.ledger.true_occupancy.hole_count(),
            })
            .collect()
    }

    pub fn sensing_rows(&self) -> Vec<SensingRow> {
        let mut rows: Vec<SensingRow> = self
            .summary
            .sensing
            .iter()
            .enumerate()
            .map(|(uav, m)| SensingRow::new(Some(uav), self.sensing_sinr_db.get(uav).copied(), m))
            .collect();
        rows.push(SensingRow::new(None, None, &self.summary.fused_sensing));
        rows
    }

    pub fn summary_row(&self) -> SummaryRow {
        let s = &self.summary;
        SummaryRow {
            agent: s.agent.clone(),
            slots: s.slots,
            transmissions: s.transmissions,
            collisions: s.collisions,
            collision_rate: s.collision_rate,
            mean_utility: s.mean_utility,
            energy_efficiency: s.energy_efficiency,
            fused_precision: s.fused_sensing.micro_precision,
            fused_recall: s.fused_sensing.micro_recall,
            fused_f1: s.fused_sensing.micro_f1,
        }
    }

    /// Audits, then writes the ledger, sensing, summary and (if present)
    /// training CSVs into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.audit()?;
        fs::create_dir_all(dir)?;
        write_rows(&dir.join(LEDGER_FILE), &self.ledger_rows())?;
        write_rows(&dir.join(SENSING_FILE), &self.sensing_rows())?;
        write_rows(&dir.join(SUMMARY_FILE), &[self.summary_row()])?;
        if let Some(log) = &self.training {
            log.write_csv(BufWriter::new(File::create(dir.join(TRAINING_FILE))?))?;
        }
        Ok(())
    }
}

/// A CSV row type with a fixed header, written even for empty tables.
pub trait CsvRow: Serialize {
    const HEADER: &'static [&'static str];
}

impl CsvRow for LedgerRow {
    const HEADER: &'static [&'static str] = &["slot", "utility", "ee", "collisions", "holes_detected", "holes_true"];
}

impl CsvRow for SensingRow {
    const HEADER: &'static [&'static str] = &["uav", "sinr_db", "precision", "recall", "f1", "fused"];
}

impl CsvRow for SummaryRow {
    const HEADER: &'static [&'static str] = &[
        "agent",
        "slots",
        "transmissions",
        "collisions",
        "collision_rate",
        "mean_utility",
        "energy_efficiency",
        "fused_precision",
        "fused_recall",
        "fused_f1",
    ];
}

pub fn write_rows<T: CsvRow>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_rows_to(&mut w, rows)?;
    w.flush()?;
    Ok(())
}

pub fn write_rows_to<T: CsvRow, W: Write>(w: W, rows: &[T]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(T::HEADER).map_err(csv_error)?;
    for row in rows {
        out.serialize(row).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    r.deserialize().map(|row| row.map_err(csv_error)).collect()
}
