//! End-to-end slotted simulation: requests, per-UAV sensing, fusion,
//! allocation and delayed access, with per-slot ledgers and CSV reports.

pub mod config;
pub mod report;
pub mod run;

pub use config::{parse_toml, read_toml, AgentKind, AgentSpec, AgentTraining, SensingSpec, SimConfig, TabularParams};
pub use report::{
    read_rows, summarize, write_rows, write_rows_to, CsvRow, LedgerRow, RunReport, RunSummary, SensingRow, SlotRecord,
    SummaryRow, LEDGER_FILE, SENSING_FILE, SUMMARY_FILE, TRAINING_FILE,
};
pub use run::{build_allocator, build_sensors, run_simulation, simulate, Allocator, Sensor, Simulation};
