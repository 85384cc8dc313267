//! Experiment harness for the `varreg-core` optimizers.
//!
//! * [`config`]: TOML experiment configs with validation and a stable hash
//! * [`data`]: CSV and IDX dataset loaders
//! * [`run`]: seeded, parallel experiment runs and their CSV/JSON records
//! * [`compare`]: paired seed-by-seed comparison of two run sets
//! * [`cli`]: the `varreg` command line

pub mod cli;
pub mod compare;
pub mod config;
pub mod data;
pub mod error;
pub mod run;

pub use compare::{compare_report, Comparison, Metric};
pub use config::{load_config, ExperimentConfig};
pub use error::{HarnessError, Result};
pub use run::{run_experiment, RunRecord, Status};
