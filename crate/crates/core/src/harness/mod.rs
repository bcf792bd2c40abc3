//! Monte Carlo experiments over the simulation setups, with CSV output.

pub mod config;
pub mod emit;
pub mod run;
pub mod setups;

pub use config::{EstimatorKind, ExperimentConfig, SetupId};
pub use emit::{emit_outputs, read_records_csv, OutputFormat, CSV_HEADER};
pub use run::{aggregate, prepared_model, run_repetition, run_setup, with_t_instruments, Aggregate, ExperimentResult, Record};
pub use setups::{ModelSpec, RotationRule};
