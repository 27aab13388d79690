use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::market::{
    BackstepMethod, FbsdeProblem, GbmModel, GeneratorForm, Payoff, RatesSpec, TimeGrid, X0Sampler,
};
use crate::nn::AdamConfig;
use crate::solver::{MeanEstimate, SolverConfig, SolverVariant};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    CallComboFixed,
    CallComboRandom,
    StraddleFixed,
    StraddleRandom,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::CallComboFixed,
        Preset::CallComboRandom,
        Preset::StraddleFixed,
        Preset::StraddleRandom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::CallComboFixed => "call_combo_fixed",
            Preset::CallComboRandom => "call_combo_random",
            Preset::StraddleFixed => "straddle_fixed",
            Preset::StraddleRandom => "straddle_random",
        }
    }

    pub fn parse(name: &str) -> Result<Self, ExperimentError> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| ExperimentError::Config(format!("unknown preset `{name}`")))
    }

    pub fn config(self) -> ExperimentConfig {
        let straddle = matches!(self, Preset::StraddleFixed | Preset::StraddleRandom);
        let market = if straddle {
            MarketConfig {
                dim: 1,
                mu: 0.05,
                sigma: 0.3,
                r_l: 0.03,
                r_b: 0.05,
                maturity: 1.0,
                n_steps: 100,
                generator: GeneratorForm::DriftAdjusted,
            }
        } else {
            MarketConfig {
                dim: 1,
                mu: 0.06,
                sigma: 0.2,
                r_l: 0.04,
                r_b: 0.06,
                maturity: 0.5,
                n_steps: 50,
                generator: GeneratorForm::DriftAdjusted,
            }
        };
        let payoff = if straddle {
            PayoffConfig::Straddle { strike: 100.0 }
        } else {
            PayoffConfig::CallCombination {
                strike_low: 120.0,
                strike_high: 150.0,
                long_weight: 1.0,
                short_weight: -2.0,
            }
        };
        let x0 = match self {
            Preset::CallComboFixed => X0Config::Fixed { value: 120.0 },
            Preset::CallComboRandom => X0Config::Uniform { lo: 70.0, hi: 170.0 },
            Preset::StraddleFixed => X0Config::Fixed { value: 100.0 },
            Preset::StraddleRandom => X0Config::Uniform { lo: 50.0, hi: 150.0 },
        };
        let batch_size = if straddle { 256 } else { 512 };
        let solver = |variant: SolverVariant, backstep: BackstepMethod| SolverConfig {
            batch_size,
            ..SolverConfig::new(variant, backstep)
        };
        let yinit = SolverVariant::BackwardYinitNetwork {
            intermediate_times: vec![],
        };
        let solvers = match self {
            Preset::CallComboFixed => vec![
                solver(
                    SolverVariant::BackwardBatchVariance {
                        estimate: MeanEstimate::RollingMean { window: 100 },
                    },
                    BackstepMethod::Exact,
                ),
                solver(SolverVariant::BackwardLearnedY0, BackstepMethod::Exact),
                solver(SolverVariant::ForwardFixed, BackstepMethod::Exact),
            ],
            Preset::CallComboRandom => vec![
                solver(yinit, BackstepMethod::Exact),
                solver(SolverVariant::ForwardRandom, BackstepMethod::Exact),
            ],
            Preset::StraddleFixed => vec![
                solver(SolverVariant::BackwardLearnedY0, BackstepMethod::Exact),
                solver(SolverVariant::BackwardLearnedY0, BackstepMethod::Taylor),
            ],
            Preset::StraddleRandom => vec![solver(yinit, BackstepMethod::Exact)],
        };
        let plot_window = match self {
            Preset::StraddleRandom => Some([80.0, 120.0]),
            _ => None,
        };
        ExperimentConfig {
            preset: Some(self),
            market,
            payoff,
            x0,
            positions: vec![Position::Long, Position::Short],
            solvers,
            out_dir: PathBuf::from(format!("runs/{}", self.name())),
            plot_window,
            oracle: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    pub dim: usize,
    pub mu: f64,
    pub sigma: f64,
    pub r_l: f64,
    pub r_b: f64,
    pub maturity: f64,
    pub n_steps: usize,
    pub generator: GeneratorForm,
}

fn default_strike_low() -> f64 {
    120.0
}
fn default_strike_high() -> f64 {
    150.0
}
fn default_long_weight() -> f64 {
    1.0
}
fn default_short_weight() -> f64 {
    -2.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PayoffConfig {
    Straddle {
        strike: f64,
    },
    CallCombination {
        #[serde(default = "default_strike_low")]
        strike_low: f64,
        #[serde(default = "default_strike_high")]
        strike_high: f64,
        #[serde(default = "default_long_weight")]
        long_weight: f64,
        #[serde(default = "default_short_weight")]
        short_weight: f64,
    },
}

impl PayoffConfig {
    pub fn payoff(&self) -> Payoff<f64> {
        match *self {
            PayoffConfig::Straddle { strike } => Payoff::straddle(strike),
            PayoffConfig::CallCombination {
                strike_low,
                strike_high,
                long_weight,
                short_weight,
            } => Payoff::CallCombination {
                strike_low,
                strike_high,
                long_weight,
                short_weight,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum X0Config {
    Fixed { value: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl X0Config {
    pub fn sampler(&self) -> X0Sampler<f64> {
        match *self {
            X0Config::Fixed { value } => X0Sampler::Fixed(value),
            X0Config::Uniform { lo, hi } => X0Sampler::Uniform { lo, hi },
        }
    }
}

/// Long prices the payoff (upper price); short prices its negation and
/// reports the lower price `-Y`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Position {
    Long,
    Short,
}

impl Position {
    pub fn name(self) -> &'static str {
        match self {
            Position::Long => "long",
            Position::Short => "short",
        }
    }

    /// Converts a value of the traded payoff into a price of this position.
    pub fn sign(self) -> f64 {
        match self {
            Position::Long => 1.0,
            Position::Short => -1.0,
        }
    }
}

/// Fully resolved experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Option<Preset>,
    pub market: MarketConfig,
    pub payoff: PayoffConfig,
    pub x0: X0Config,
    pub positions: Vec<Position>,
    pub solvers: Vec<SolverConfig>,
    pub out_dir: PathBuf,
    /// Range of initial spots highlighted in plots of `yinit_curve.csv`.
    pub plot_window: Option<[f64; 2]>,
    /// Whether to add PDE reference rows to the summary (one asset only).
    pub oracle: bool,
}

/// The on-disk document: a preset and/or explicit fields; explicit fields
/// override the preset.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    preset: Option<String>,
    dim: Option<usize>,
    mu: Option<f64>,
    sigma: Option<f64>,
    r_l: Option<f64>,
    r_b: Option<f64>,
    maturity: Option<f64>,
    n_steps: Option<usize>,
    generator: Option<GeneratorForm>,
    payoff: Option<PayoffConfig>,
    x0: Option<X0Config>,
    positions: Option<Vec<Position>>,
    solvers: Option<Vec<SolverConfig>>,
    batch_size: Option<usize>,
    n_batches: Option<usize>,
    seed: Option<u64>,
    optimizer: Option<AdamConfig>,
    out_dir: Option<PathBuf>,
    plot_window: Option<[f64; 2]>,
    oracle: Option<bool>,
}

fn missing(field: &str) -> ExperimentError {
    ExperimentError::Config(format!("missing field `{field}` (no preset given)"))
}

/// Command-line overrides, applied after the document.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub n_batches: Option<usize>,
    pub batch_size: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        Self::resolve(raw)
    }

    pub fn from_path(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn resolve(raw: RawConfig) -> Result<Self, ExperimentError> {
        let base = raw.preset.as_deref().map(Preset::parse).transpose()?.map(Preset::config);
        let pick = |v: Option<f64>, b: Option<f64>, name: &str| v.or(b).ok_or_else(|| missing(name));
        let bm = base.as_ref().map(|b| b.market);
        let market = MarketConfig {
            dim: raw.dim.or(bm.map(|m| m.dim)).unwrap_or(1),
            mu: pick(raw.mu, bm.map(|m| m.mu), "mu")?,
            sigma: pick(raw.sigma, bm.map(|m| m.sigma), "sigma")?,
            r_l: pick(raw.r_l, bm.map(|m| m.r_l), "r_l")?,
            r_b: pick(raw.r_b, bm.map(|m| m.r_b), "r_b")?,
            maturity: pick(raw.maturity, bm.map(|m| m.maturity), "maturity")?,
            n_steps: raw.n_steps.or(bm.map(|m| m.n_steps)).ok_or_else(|| missing("n_steps"))?,
            generator: raw.generator.or(bm.map(|m| m.generator)).unwrap_or_default(),
        };
        let payoff = raw
            .payoff
            .or(base.as_ref().map(|b| b.payoff))
            .ok_or_else(|| missing("payoff"))?;
        let x0 = raw.x0.or(base.as_ref().map(|b| b.x0)).ok_or_else(|| missing("x0"))?;
        let mut solvers = raw
            .solvers
            .or(base.as_ref().map(|b| b.solvers.clone()))
            .ok_or_else(|| missing("solvers"))?;
        for s in &mut solvers {
            if let Some(v) = raw.batch_size {
                s.batch_size = v;
            }
            if let Some(v) = raw.n_batches {
                s.n_batches = v;
            }
            if let Some(v) = raw.seed {
                s.seed = v;
            }
            if let Some(v) = raw.optimizer {
                s.optimizer = v;
            }
        }
        let config = ExperimentConfig {
            preset: base.as_ref().and_then(|b| b.preset),
            market,
            payoff,
            x0,
            positions: raw
                .positions
                .or(base.as_ref().map(|b| b.positions.clone()))
                .unwrap_or_else(|| vec![Position::Long, Position::Short]),
            solvers,
            out_dir: raw
                .out_dir
                .or(base.as_ref().map(|b| b.out_dir.clone()))
                .unwrap_or_else(|| PathBuf::from("runs/custom")),
            plot_window: raw.plot_window.or(base.as_ref().and_then(|b| b.plot_window)),
            oracle: raw.oracle.unwrap_or(true),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn apply(&mut self, o: &Overrides) {
        for s in &mut self.solvers {
            if let Some(v) = o.seed {
                s.seed = v;
            }
            if let Some(v) = o.n_batches {
                s.n_batches = v;
            }
            if let Some(v) = o.batch_size {
                s.batch_size = v;
            }
        }
        if let Some(d) = &o.out_dir {
            self.out_dir = d.clone();
        }
    }

    /// Builds the long-position problem, checking every model constraint.
    pub fn problem(&self) -> Result<FbsdeProblem<f64>, ExperimentError> {
        let m = &self.market;
        let problem = FbsdeProblem {
            model: GbmModel::new(m.dim, m.mu, m.sigma)?,
            rates: RatesSpec::new(m.r_l, m.r_b)?,
            grid: TimeGrid::new(0.0, m.maturity, m.n_steps)?,
            payoff: self.payoff.payoff(),
            generator: m.generator,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.problem()?;
        self.x0.sampler().validate()?;
        if self.positions.is_empty() {
            return Err(ExperimentError::Config("positions must not be empty".into()));
        }
        let fixed = self.x0.sampler().is_fixed();
        for s in &self.solvers {
            if s.variant.needs_fixed_x0() != fixed {
                return Err(ExperimentError::Config(format!(
                    "solver {} needs a {} x0",
                    s.label(),
                    if fixed { "random" } else { "fixed" }
                )));
            }
            if s.batch_size == 0 {
                return Err(ExperimentError::Config("batch_size must be positive".into()));
            }
        }
        if let Some([lo, hi]) = self.plot_window {
            if !(lo < hi) {
                return Err(ExperimentError::Config("plot_window needs lo < hi".into()));
            }
        }
        Ok(())
    }
}
