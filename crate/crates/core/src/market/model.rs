use super::MarketError;
use crate::scalar::Scalar;

/// Uniform time discretization of `[t0, maturity]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid<T> {
    pub t0: T,
    pub maturity: T,
    pub n_steps: usize,
}

impl<T: Scalar> TimeGrid<T> {
    pub fn new(t0: T, maturity: T, n_steps: usize) -> Result<Self, MarketError> {
        if n_steps == 0 || !(maturity > t0) {
            return Err(MarketError::InvalidGrid(format!(
                "need maturity > t0 and n_steps > 0, got [{t0}, {maturity}] with {n_steps} steps"
            )));
        }
        Ok(Self {
            t0,
            maturity,
            n_steps,
        })
    }

    #[inline]
    pub fn dt(&self) -> T {
        (self.maturity - self.t0) / T::from_count(self.n_steps)
    }

    #[inline]
    pub fn time(&self, i: usize) -> T {
        self.t0 + self.dt() * T::from_count(i)
    }

    pub fn horizon(&self) -> T {
        self.maturity - self.t0
    }
}

/// Independent geometric Brownian motions with common drift and
/// lognormal volatility; the normal volatility is `sigma_ln * x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GbmModel<T> {
    pub dim: usize,
    pub mu: T,
    pub sigma_ln: T,
}

impl<T: Scalar> GbmModel<T> {
    pub fn new(dim: usize, mu: T, sigma_ln: T) -> Result<Self, MarketError> {
        if dim == 0 || !(sigma_ln > T::zero()) {
            return Err(MarketError::InvalidModel(format!(
                "need dim > 0 and sigma_ln > 0, got dim={dim}, sigma_ln={sigma_ln}"
            )));
        }
        Ok(Self { dim, mu, sigma_ln })
    }

    #[inline]
    pub fn sigma_normal(&self, x: T) -> T {
        self.sigma_ln * x
    }
}

/// Constant lending and borrowing rates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatesSpec<T> {
    pub r_l: T,
    pub r_b: T,
}

impl<T: Scalar> RatesSpec<T> {
    pub fn new(r_l: T, r_b: T) -> Result<Self, MarketError> {
        if r_b < r_l {
            return Err(MarketError::InvalidRates(format!(
                "borrowing rate {r_b} below lending rate {r_l}"
            )));
        }
        Ok(Self { r_l, r_b })
    }
}

/// European payoffs on the maximum across assets.
#[derive(Clone, Debug, PartialEq)]
pub enum Payoff<T> {
    /// `long_weight (m - strike_low)+ + short_weight (m - strike_high)+`.
    CallCombination {
        strike_low: T,
        strike_high: T,
        long_weight: T,
        short_weight: T,
    },
    /// `|m - strike|`.
    Straddle { strike: T },
    Negated(Box<Payoff<T>>),
}

impl<T: Scalar> Payoff<T> {
    /// Long one call at 120, short two calls at 150.
    pub fn call_combination() -> Self {
        Self::CallCombination {
            strike_low: T::lit(120.0),
            strike_high: T::lit(150.0),
            long_weight: T::one(),
            short_weight: T::lit(-2.0),
        }
    }

    pub fn straddle(strike: T) -> Self {
        Self::Straddle { strike }
    }

    pub fn negated(self) -> Self {
        match self {
            Self::Negated(inner) => *inner,
            p => Self::Negated(Box::new(p)),
        }
    }

    pub fn eval(&self, x: &[T]) -> T {
        let m = x.iter().copied().fold(T::neg_infinity(), T::max);
        self.eval_on_max(m)
    }

    pub fn eval_on_max(&self, m: T) -> T {
        let zero = T::zero();
        match self {
            Self::CallCombination {
                strike_low,
                strike_high,
                long_weight,
                short_weight,
            } => *long_weight * (m - *strike_low).max(zero) + *short_weight * (m - *strike_high).max(zero),
            Self::Straddle { strike } => (m - *strike).abs(),
            Self::Negated(inner) => -inner.eval_on_max(m),
        }
    }

    /// Strikes, used for grid placement.
    pub fn strikes(&self) -> Vec<T> {
        match self {
            Self::CallCombination {
                strike_low,
                strike_high,
                ..
            } => vec![*strike_low, *strike_high],
            Self::Straddle { strike } => vec![*strike],
            Self::Negated(inner) => inner.strikes(),
        }
    }
}

pub fn eval_payoff<T: Scalar>(payoff: &Payoff<T>, x: &[T]) -> T {
    payoff.eval(x)
}

/// Which differential-rates driver the BSDE uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorForm {
    /// `-r_l y + (r_b - r_l)(sum(pi) - y)+`: assets assumed to grow at `r_l`.
    PaperRiskNeutral,
    /// Adds `-(mu - r_l) sum(pi)` so that simulating under drift `mu`
    /// reproduces the replication PDE.
    #[default]
    DriftAdjusted,
}

/// A complete pricing instance.
#[derive(Clone, Debug, PartialEq)]
pub struct FbsdeProblem<T> {
    pub model: GbmModel<T>,
    pub rates: RatesSpec<T>,
    pub grid: TimeGrid<T>,
    pub payoff: Payoff<T>,
    pub generator: GeneratorForm,
}

impl<T: Scalar> FbsdeProblem<T> {
    /// Checks `1 + r dt > 0` for both rates.
    pub fn validate(&self) -> Result<(), MarketError> {
        let dt = self.grid.dt();
        for r in [self.rates.r_l, self.rates.r_b] {
            if !(T::one() + r * dt > T::zero()) {
                return Err(MarketError::InvalidRates(format!(
                    "1 + r dt must be positive, got r={r}, dt={dt}"
                )));
            }
        }
        Ok(())
    }

    pub fn step_params(&self) -> super::StepParams<T> {
        super::StepParams {
            mu: self.model.mu,
            sigma_ln: self.model.sigma_ln,
            rates: self.rates,
            form: self.generator,
            dt: self.grid.dt(),
        }
    }

    /// Same problem on the negated payoff (lower price).
    pub fn negated(&self) -> Self {
        Self {
            payoff: self.payoff.clone().negated(),
            ..self.clone()
        }
    }
}
