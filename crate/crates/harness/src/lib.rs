//! Monte Carlo harness: budget sweeps with repeated trials, aggregation of
//! interval width and coverage, viability cutoffs, configuration files and
//! CSV ingestion.

pub mod config;
pub mod csv_io;
pub mod error;
pub mod sources;
pub mod sweep;

pub use config::{DataSource, FamilyKind, Method, RawConfig, SweepConfig};
pub use csv_io::{class_balance, load_csv_dataset, write_dataset_csv, CsvSchema};
pub use error::{HarnessError, Result};
pub use sweep::{run_sweep, viability_cutoff, SweepResult, SweepRow, TrialRecord};
