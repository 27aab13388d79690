//! Euler–Maruyama simulation of asset paths.
//!
//! Every path draws from its own ChaCha8 stream keyed by `(seed, path)`, and
//! consumes it in a fixed order (initial spot, then one normal per step and
//! asset), so a path's values depend only on the seed, the path index and
//! the step index, never on batch size or evaluation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{GbmModel, MarketError, TimeGrid};
use crate::nn::Tensor;
use crate::scalar::Scalar;

/// Distribution of the initial spot, applied independently per asset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum X0Sampler<T> {
    Fixed(T),
    Uniform { lo: T, hi: T },
}

impl<T: Scalar> X0Sampler<T> {
    pub fn validate(&self) -> Result<(), MarketError> {
        match *self {
            Self::Uniform { lo, hi } if !(lo < hi) => Err(MarketError::InvalidSampler(format!(
                "uniform sampler needs lo < hi, got [{lo}, {hi}]"
            ))),
            _ => Ok(()),
        }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, Self::Fixed(_))
    }

    /// Center of the distribution.
    pub fn center(&self) -> T {
        match *self {
            Self::Fixed(x) => x,
            Self::Uniform { lo, hi } => (lo + hi) / T::lit(2.0),
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> T {
        match *self {
            Self::Fixed(x) => x,
            Self::Uniform { lo, hi } => {
                let u: f64 = rng.gen();
                lo + (hi - lo) * T::lit(u)
            }
        }
    }
}

/// `x + mu x dt + sigma_ln x dW`, elementwise.
pub fn gbm_step<T: Scalar>(x: &[T], model: &GbmModel<T>, dt: T, dw: &[T]) -> Vec<T> {
    x.iter()
        .zip(dw)
        .map(|(&xi, &w)| xi + model.mu * xi * dt + model.sigma_ln * xi * w)
        .collect()
}

/// Simulated asset values and Brownian increments for one mini-batch.
///
/// Stored step-major: the values of asset `d` at step `i` over all paths are
/// one contiguous row, matching the feature-major layout of [`Tensor`].
#[derive(Clone, Debug, PartialEq)]
pub struct PathBatch<T> {
    batch: usize,
    n_steps: usize,
    dim: usize,
    x: Vec<T>,
    dw: Vec<T>,
    pub seed: u64,
}

impl<T: Scalar> PathBatch<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn x(&self, path: usize, step: usize, asset: usize) -> T {
        self.x[(step * self.dim + asset) * self.batch + path]
    }

    #[inline]
    pub fn dw(&self, path: usize, step: usize, asset: usize) -> T {
        self.dw[(step * self.dim + asset) * self.batch + path]
    }

    /// Asset values at `step` as a `dim x batch` tensor.
    pub fn x_at(&self, step: usize) -> Tensor<T> {
        let n = self.dim * self.batch;
        Tensor::from_vec(self.dim, self.batch, self.x[step * n..(step + 1) * n].to_vec())
    }

    /// Increments over `[t_step, t_step+1]` as a `dim x batch` tensor.
    pub fn dw_at(&self, step: usize) -> Tensor<T> {
        let n = self.dim * self.batch;
        Tensor::from_vec(self.dim, self.batch, self.dw[step * n..(step + 1) * n].to_vec())
    }

    /// State of one path at one step.
    pub fn x_point(&self, path: usize, step: usize) -> Vec<T> {
        (0..self.dim).map(|d| self.x(path, step, d)).collect()
    }

    pub fn dw_point(&self, path: usize, step: usize) -> Vec<T> {
        (0..self.dim).map(|d| self.dw(path, step, d)).collect()
    }
}

/// splitmix64 finalizer, used to key per-path streams.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn simulate_path_batch<T: Scalar>(
    model: &GbmModel<T>,
    grid: &TimeGrid<T>,
    sampler: &X0Sampler<T>,
    batch: usize,
    seed: u64,
) -> Result<PathBatch<T>, MarketError> {
    if batch == 0 {
        return Err(MarketError::InvalidSampler("batch size must be positive".into()));
    }
    sampler.validate()?;
    let (dim, n_steps) = (model.dim, grid.n_steps);
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let mut x = vec![T::zero(); (n_steps + 1) * dim * batch];
    let mut dw = vec![T::zero(); n_steps * dim * batch];
    let idx = |step: usize, asset: usize, path: usize| (step * dim + asset) * batch + path;
    for path in 0..batch {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, path as u64));
        for asset in 0..dim {
            x[idx(0, asset, path)] = sampler.sample(&mut rng);
        }
        for step in 0..n_steps {
            for asset in 0..dim {
                let z: f64 = rng.sample(StandardNormal);
                let w = T::lit(z) * sqrt_dt;
                let xi = x[idx(step, asset, path)];
                dw[idx(step, asset, path)] = w;
                x[idx(step + 1, asset, path)] = xi + model.mu * xi * dt + model.sigma_ln * xi * w;
            }
        }
    }
    Ok(PathBatch {
        batch,
        n_steps,
        dim,
        x,
        dw,
        seed,
    })
}
