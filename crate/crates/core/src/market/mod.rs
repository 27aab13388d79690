//! Market model, payoffs, path simulation and single BSDE time-steps.

mod model;
mod paths;
mod step;

pub use model::{eval_payoff, FbsdeProblem, GbmModel, GeneratorForm, Payoff, RatesSpec, TimeGrid};
pub use paths::{gbm_step, mix_seed, simulate_path_batch, PathBatch, X0Sampler};
pub use step::{
    backstep_exact, backstep_taylor, eval_generator, forward_y_step, BackStep, BackstepMethod, Branch,
    StepParams,
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MarketError {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid rates: {0}")]
    InvalidRates(String),
    #[error("invalid initial-spot sampler: {0}")]
    InvalidSampler(String),
    #[error(
        "backward step has no self-consistent branch (y_next={y_next}, sum(pi)={pi_sum}, \
         borrow={borrow}, lend={lend})"
    )]
    BackstepInconsistent {
        y_next: f64,
        pi_sum: f64,
        borrow: f64,
        lend: f64,
    },
}
