//! Scenario runner for the `ensemble-steer` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;

use ensemble_steer::ErrorClass;
use thiserror::Error;

pub mod check;
pub mod run;
pub mod scenario;

pub use run::{run_scenario, RunOutcome};
pub use scenario::Scenario;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_SCHEMA: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_INTEGRATION: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {}: {source}", path.display())]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot write {}: {source}", path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("scenario error: {0}")]
    Schema(String),

    #[error(transparent)]
    Core(#[from] ensemble_steer::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Read { .. } | CliError::Write { .. } | CliError::Schema(_) => EXIT_SCHEMA,
            CliError::Core(e) => match e.class() {
                ErrorClass::Input => EXIT_SCHEMA,
                ErrorClass::Infeasible => EXIT_INFEASIBLE,
                ErrorClass::Integration => EXIT_INTEGRATION,
            },
        }
    }

    pub fn class_name(&self) -> &'static str {
        match self.exit_code() {
            EXIT_INFEASIBLE => "infeasible",
            EXIT_INTEGRATION => "integration",
            _ => "input",
        }
    }
}
