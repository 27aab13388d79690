//! Forward and backward deep BSDE solvers.
//!
//! All variants share one trainable [`DeepBsdeModel`]: a trading strategy
//! (value of the risky holdings as a function of time and spot) plus, per
//! variant, an initial-value head. Training draws a fresh path batch for every
//! mini-batch, rolls the portfolio value along it and takes one Adam step on
//! the variant's loss.

mod model;
mod train;

use serde::{Deserialize, Serialize};

use crate::market::{BackstepMethod, MarketError};
use crate::nn::{AdamConfig, NnError};

pub use model::{DeepBsdeModel, Rollout, StrategyModel, ValueHead};
pub use train::{train, PriceStats, TrainOutcome, TrainReport};

/// How the batch-variance method reads a price off the rolled-back values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum MeanEstimate {
    LastBatchMean,
    RollingMean { window: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum SolverVariant {
    /// Forward-in-time BSDE with learned scalar `Y0` and initial holding.
    ForwardFixed,
    /// Forward-in-time BSDE with a `Yinit(X0)` network.
    ForwardRandom,
    /// Roll back from the payoff and minimize the mini-batch variance of `Y0`.
    BackwardBatchVariance { estimate: MeanEstimate },
    /// Roll back and fit a learned scalar `Y0`.
    BackwardLearnedY0,
    /// Roll back and fit a `Yinit(X0)` network, optionally with value
    /// networks at intermediate step indices.
    BackwardYinitNetwork {
        #[serde(default)]
        intermediate_times: Vec<usize>,
    },
}

impl SolverVariant {
    pub fn is_backward(&self) -> bool {
        !matches!(self, Self::ForwardFixed | Self::ForwardRandom)
    }

    /// Whether the variant needs a fixed initial spot (otherwise it needs a
    /// distribution).
    pub fn needs_fixed_x0(&self) -> bool {
        matches!(
            self,
            Self::ForwardFixed | Self::BackwardBatchVariance { .. } | Self::BackwardLearnedY0
        )
    }

    /// Strategy parameterization used unless configured otherwise.
    pub fn default_strategy(&self) -> StrategyKind {
        match self {
            Self::BackwardBatchVariance { .. } => StrategyKind::SharedNet,
            _ => StrategyKind::PerStepNets,
        }
    }

    /// Short label used in reports.
    pub fn label(&self) -> String {
        match self {
            Self::ForwardFixed => "forward_fixed".into(),
            Self::ForwardRandom => "forward_random".into(),
            Self::BackwardBatchVariance {
                estimate: MeanEstimate::LastBatchMean,
            } => "batch_variance_last".into(),
            Self::BackwardBatchVariance {
                estimate: MeanEstimate::RollingMean { window },
            } => format!("batch_variance_mean{window}"),
            Self::BackwardLearnedY0 => "learned_y0".into(),
            Self::BackwardYinitNetwork { intermediate_times } if intermediate_times.is_empty() => {
                "yinit_network".into()
            }
            Self::BackwardYinitNetwork { intermediate_times } => {
                format!("yinit_network_{}", intermediate_times.len())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    /// One network of `(t, x)` shared by all steps.
    SharedNet,
    /// One network of `x` per time step.
    PerStepNets,
}

fn default_backstep() -> BackstepMethod {
    BackstepMethod::Exact
}

fn default_batch_size() -> usize {
    256
}

fn default_n_batches() -> usize {
    20_000
}

fn default_range_window() -> usize {
    2000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub variant: SolverVariant,
    #[serde(default = "default_backstep")]
    pub backstep: BackstepMethod,
    #[serde(default)]
    pub strategy: Option<StrategyKind>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_n_batches")]
    pub n_batches: usize,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default)]
    pub seed: u64,
    /// Trailing number of batches over which `y0_range` is reported.
    #[serde(default = "default_range_window")]
    pub range_window: usize,
    /// Hidden-layer widths; defaults to two layers of `dim + 10`.
    #[serde(default)]
    pub hidden_widths: Option<Vec<usize>>,
}

impl SolverConfig {
    pub fn new(variant: SolverVariant, backstep: BackstepMethod) -> Self {
        Self {
            variant,
            backstep,
            strategy: None,
            batch_size: default_batch_size(),
            n_batches: default_n_batches(),
            optimizer: AdamConfig::default(),
            seed: 0,
            range_window: default_range_window(),
            hidden_widths: None,
        }
    }

    pub fn strategy_kind(&self) -> StrategyKind {
        self.strategy.unwrap_or_else(|| self.variant.default_strategy())
    }

    pub fn label(&self) -> String {
        let b = match self.backstep {
            BackstepMethod::Exact => "exact",
            BackstepMethod::Taylor => "taylor",
        };
        if self.variant.is_backward() {
            format!("{}_{b}", self.variant.label())
        } else {
            self.variant.label()
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Network(#[from] NnError),
    #[error("training diverged at batch {batch}: {reason}")]
    Diverged {
        batch: usize,
        reason: String,
        report: Box<TrainReport>,
    },
    #[error("estimate window {window} exceeds history of {available} batches")]
    WindowTooLarge { window: usize, available: usize },
}
