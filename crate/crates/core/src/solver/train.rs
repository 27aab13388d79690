use std::time::Instant;

use super::{DeepBsdeModel, MeanEstimate, SolverConfig, SolverError, SolverVariant};
use crate::market::{mix_seed, simulate_path_batch, FbsdeProblem, X0Sampler};
use crate::nn::{adam_update, AdamState, NnError};
use crate::scalar::Scalar;

/// Per-batch training record.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub loss_history: Vec<f64>,
    /// Price estimate after each batch, read the way the variant reports it.
    pub y0_history: Vec<f64>,
    /// Mean of the rolled (or learned) time-0 values on each batch.
    pub batch_means: Vec<f64>,
    pub y0_final: f64,
    /// `(min, max)` of `y0_history` over the trailing window.
    pub y0_range: (f64, f64),
    pub wall_time: f64,
}

impl TrainReport {
    fn finish(&mut self, window: usize, started: Instant) {
        self.wall_time = started.elapsed().as_secs_f64();
        let tail = &self.y0_history[self.y0_history.len().saturating_sub(window)..];
        self.y0_final = tail.last().copied().unwrap_or(f64::NAN);
        self.y0_range = tail
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if tail.is_empty() {
            self.y0_range = (f64::NAN, f64::NAN);
        }
    }
}

/// Monte Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriceStats {
    pub mean: f64,
    pub std_err: f64,
    pub n_paths: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub model: DeepBsdeModel<T>,
    pub report: TrainReport,
}

fn rolling_mean(history: &[f64], window: usize) -> f64 {
    let tail = &history[history.len().saturating_sub(window)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

impl<T: Scalar> TrainOutcome<T> {
    /// The variant's price readout at the center of the initial-spot
    /// distribution.
    pub fn estimate_price(&self) -> Result<f64, SolverError> {
        let available = self.report.batch_means.len();
        match self.model.variant() {
            SolverVariant::BackwardBatchVariance { estimate } => {
                let window = match *estimate {
                    MeanEstimate::LastBatchMean => 1,
                    MeanEstimate::RollingMean { window } => window,
                };
                if window > available {
                    return Err(SolverError::WindowTooLarge { window, available });
                }
                Ok(rolling_mean(&self.report.batch_means, window))
            }
            _ => {
                let x0 = vec![self.model.sampler().center(); self.model.problem().model.dim];
                Ok(self.model.learned_y0(&x0)?.map(|v| v.as_f64()).unwrap_or(f64::NAN))
            }
        }
    }

    /// Price as a function of the initial spot; models without a `Yinit`
    /// network return their single estimate.
    pub fn price_at(&self, x0: T) -> Result<f64, SolverError> {
        match self.model.variant() {
            SolverVariant::ForwardRandom | SolverVariant::BackwardYinitNetwork { .. } => {
                let x = vec![x0; self.model.problem().model.dim];
                Ok(self.model.learned_y0(&x)?.map(|v| v.as_f64()).unwrap_or(f64::NAN))
            }
            _ => self.estimate_price(),
        }
    }

    /// Mean of the rolled-back time-0 value over `n_paths` fresh paths from
    /// `x0` with the frozen strategy.
    pub fn rollback_stats(&self, x0: T, n_paths: usize, seed: u64) -> Result<PriceStats, SolverError> {
        let (mean, se) = self.model.rollback_mean_from(0, x0, n_paths, seed)?;
        Ok(PriceStats {
            mean: mean.as_f64(),
            std_err: se.as_f64(),
            n_paths,
        })
    }
}

/// Trains a fresh model: every batch draws new paths keyed by
/// `(config.seed, batch index)`, evaluates the variant's loss and takes one
/// Adam step.
pub fn train<T: Scalar>(
    problem: &FbsdeProblem<T>,
    sampler: &X0Sampler<T>,
    config: &SolverConfig,
) -> Result<TrainOutcome<T>, SolverError> {
    let started = Instant::now();
    let mut model = DeepBsdeModel::new(problem, sampler, config)?;
    let mut adam = AdamState::new(model.params().len(), config.optimizer);
    let mut report = TrainReport::default();
    let x0_center = vec![sampler.center(); problem.model.dim];

    for b in 0..config.n_batches {
        let paths = simulate_path_batch(
            &problem.model,
            &problem.grid,
            sampler,
            config.batch_size,
            mix_seed(config.seed, b as u64),
        )?;
        if b == 0 {
            model.warm_start(&paths);
        }
        let step = model.loss_and_grad(&paths).and_then(|(loss, grad, mean)| {
            if !loss.is_finite() {
                return Err(SolverError::Network(NnError::NonFiniteGradient { index: 0 }));
            }
            adam_update(model.params_mut(), &grad, &mut adam)?;
            Ok((loss, mean))
        });
        let (loss, mean) = match step {
            Ok(v) => v,
            Err(e @ (SolverError::Network(_) | SolverError::Market(_))) => {
                report.finish(config.range_window, started);
                return Err(SolverError::Diverged {
                    batch: b,
                    reason: e.to_string(),
                    report: Box::new(report),
                });
            }
            Err(e) => return Err(e),
        };
        report.loss_history.push(loss.as_f64());
        report.batch_means.push(mean.as_f64());
        let estimate = match &config.variant {
            SolverVariant::BackwardBatchVariance { estimate } => match *estimate {
                MeanEstimate::LastBatchMean => mean.as_f64(),
                MeanEstimate::RollingMean { window } => rolling_mean(&report.batch_means, window),
            },
            _ => model
                .learned_y0(&x0_center)?
                .map(|v| v.as_f64())
                .unwrap_or(f64::NAN),
        };
        report.y0_history.push(estimate);
    }
    report.finish(config.range_window, started);
    Ok(TrainOutcome { model, report })
}
