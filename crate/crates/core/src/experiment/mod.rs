//! Config-driven experiments: presets, training runs, PDE reference values
//! and CSV artifacts.

mod config;
mod csv;
mod run;

pub use config::{ExperimentConfig, MarketConfig, Overrides, PayoffConfig, Position, Preset, X0Config};
pub use csv::{fmt_float, write_csv};
pub use run::{
    oracle_table, pde_price, run_experiment, write_strategy_grid, write_yinit_curve, OracleRow, RunArtifacts,
    SummaryRow, LOSS_HEADER, STRATEGY_HEADER, SUMMARY_HEADER, Y0_HEADER, YINIT_HEADER,
};

use crate::market::MarketError;
use crate::pde::PdeError;
use crate::solver::SolverError;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl ExperimentError {
    /// Process exit code: 2 for configuration problems, 3 for numerical
    /// failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Numerical(_) => 3,
            Self::Io(_) => 1,
        }
    }
}

impl From<MarketError> for ExperimentError {
    fn from(e: MarketError) -> Self {
        match e {
            MarketError::BackstepInconsistent { .. } => Self::Numerical(e.to_string()),
            other => Self::Config(other.to_string()),
        }
    }
}

impl From<SolverError> for ExperimentError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::InvalidConfig(_) | SolverError::WindowTooLarge { .. } => Self::Config(e.to_string()),
            SolverError::Market(m) => m.into(),
            other => Self::Numerical(other.to_string()),
        }
    }
}

impl From<PdeError> for ExperimentError {
    fn from(e: PdeError) -> Self {
        match e {
            PdeError::InvalidInput(_) | PdeError::InvalidGrid(_) | PdeError::OutOfRange { .. } => {
                Self::Config(e.to_string())
            }
            PdeError::NoConvergence { .. } => Self::Numerical(e.to_string()),
        }
    }
}

impl From<crate::nn::NnError> for ExperimentError {
    fn from(e: crate::nn::NnError) -> Self {
        Self::Numerical(e.to_string())
    }
}
