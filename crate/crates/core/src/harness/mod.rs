//! Experiment runner: configs, SER bookkeeping, manifests.

mod config;
mod experiments;
mod stats;

pub use config::{
    preset, presets, BaseGrid, ExperimentConfig, ExperimentKind, FilterSettings, IsiSettings, ModelSource,
    CONFIG_VERSION, MIN_REPLICATES,
};
pub use experiments::{run_experiment, AgreementRow, ExperimentOutput, Manifest};
pub use stats::{fit_loglog_slope, ser_by_receptors, wilson_interval, SerRow, SerTable, SlopeFit, Z95};

use thiserror::Error;

use crate::demod::DemodError;
use crate::exact_filter::FilterError;
use crate::internal_model::InternalModelError;
use crate::model::ModelError;
use crate::ssa::{FormatError, SsaError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("budget exceeded: {0}")]
    Budget(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Numerical(_) => 3,
            HarnessError::Budget(_) => 4,
            HarnessError::Io(_) => 1,
        }
    }
}

impl From<ModelError> for HarnessError {
    fn from(e: ModelError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

impl From<SsaError> for HarnessError {
    fn from(e: SsaError) -> Self {
        match e {
            SsaError::Invalid(m) => HarnessError::Config(m),
            e => HarnessError::Numerical(e.to_string()),
        }
    }
}

impl From<InternalModelError> for HarnessError {
    fn from(e: InternalModelError) -> Self {
        match e {
            InternalModelError::Simulation(e) => e.into(),
            InternalModelError::Io(e) => HarnessError::Io(e),
            e => HarnessError::Config(e.to_string()),
        }
    }
}

impl From<DemodError> for HarnessError {
    fn from(e: DemodError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

impl From<FilterError> for HarnessError {
    fn from(e: FilterError) -> Self {
        match e {
            FilterError::Config(_) | FilterError::TooLarge(_) => HarnessError::Config(e.to_string()),
            e => HarnessError::Numerical(e.to_string()),
        }
    }
}

impl From<FormatError> for HarnessError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Io(e) => HarnessError::Io(e),
            e => HarnessError::Config(e.to_string()),
        }
    }
}
