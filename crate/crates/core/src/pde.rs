//! One-dimensional reference pricers: Black–Scholes closed form for equal
//! rates and a fully implicit finite-difference solver for the
//! differential-rates pricing PDE
//!
//! ```text
//! u_t + 1/2 sigma^2 x^2 u_xx + r_l (x u_x - u) + (r_b - r_l)(x u_x - u)+ = 0
//! ```
//!
//! The rate is a pointwise control (`r_b` where `x u_x - u > 0`, else `r_l`)
//! resolved inside each implicit time step by policy iteration.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::market::Payoff;
use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PdeError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("policy iteration did not converge in {sweeps} sweeps at time step {step}")]
    NoConvergence { step: usize, sweeps: usize },
    #[error("x0 = {x0} outside grid range [{lo}, {hi}]")]
    OutOfRange { x0: f64, lo: f64, hi: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BsKind {
    Call,
    Put,
    Straddle,
}

/// Black–Scholes price with a single rate `r`.
pub fn bs_price<T: Scalar>(kind: BsKind, spot: T, strike: T, r: T, sigma: T, maturity: T) -> Result<T, PdeError> {
    let (s, k, r, v, t) = (spot.as_f64(), strike.as_f64(), r.as_f64(), sigma.as_f64(), maturity.as_f64());
    if !(s > 0.0 && k > 0.0 && v > 0.0 && t > 0.0) {
        return Err(PdeError::InvalidInput(format!(
            "spot, strike, sigma and maturity must be positive (S={s}, K={k}, sigma={v}, T={t})"
        )));
    }
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    let sd = v * t.sqrt();
    let d1 = ((s / k).ln() + (r + 0.5 * v * v) * t) / sd;
    let d2 = d1 - sd;
    let df = (-r * t).exp();
    let call = s * n.cdf(d1) - k * df * n.cdf(d2);
    let put = k * df * n.cdf(-d2) - s * n.cdf(-d1);
    let value = match kind {
        BsKind::Call => call,
        BsKind::Put => put,
        BsKind::Straddle => call + put,
    };
    Ok(T::lit(value))
}

/// Whether the solve prices the long payoff (upper price) or the short
/// payoff (lower price).
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Upper,
    Lower,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HjbProblem<T> {
    pub sigma_ln: T,
    pub r_l: T,
    pub r_b: T,
    pub payoff: Payoff<T>,
    pub maturity: T,
    pub direction: Direction,
}

/// Asset nodes plus number of time steps.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid1D<T> {
    nodes: Vec<T>,
    pub time_steps: usize,
}

impl<T: Scalar> Grid1D<T> {
    pub fn new(nodes: Vec<T>, time_steps: usize) -> Result<Self, PdeError> {
        if nodes.len() < 3 {
            return Err(PdeError::InvalidGrid("need at least 3 nodes".into()));
        }
        if nodes[0] != T::zero() {
            return Err(PdeError::InvalidGrid("first node must be 0".into()));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(PdeError::InvalidGrid("nodes must be strictly increasing".into()));
        }
        if time_steps == 0 {
            return Err(PdeError::InvalidGrid("need at least one time step".into()));
        }
        Ok(Self { nodes, time_steps })
    }

    /// `n_nodes` equally spaced nodes on `[0, x_max]`.
    pub fn uniform(x_max: T, n_nodes: usize, time_steps: usize) -> Result<Self, PdeError> {
        if n_nodes < 3 || !(x_max > T::zero()) {
            return Err(PdeError::InvalidGrid(format!("bad uniform grid: {n_nodes} nodes on [0, {x_max}]")));
        }
        let h = x_max / T::from_count(n_nodes - 1);
        let nodes = (0..n_nodes).map(|i| h * T::from_count(i)).collect();
        Self::new(nodes, time_steps)
    }

    /// Uniform grid whose spacing puts every `anchor` (strikes, spot) on a
    /// node: `x_max` is the smallest value `>= x_max_min` with that property.
    pub fn uniform_anchored(x_max_min: T, n_nodes: usize, anchors: &[T], time_steps: usize) -> Result<Self, PdeError> {
        let cells = T::from_count(n_nodes - 1);
        let mut h = x_max_min / cells;
        // Widen the spacing until it divides the smallest anchor.
        if let Some(&a) = anchors.iter().filter(|a| **a > T::zero()).min_by(|a, b| a.partial_cmp(b).unwrap()) {
            let per = (a / h).floor().max(T::one());
            h = a / per;
            let aligned = anchors
                .iter()
                .all(|&x| ((x / h) - (x / h).round()).abs() < T::lit(1e-9));
            if !aligned {
                h = x_max_min / cells;
            }
        }
        Self::uniform(h * cells, n_nodes, time_steps)
    }

    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    pub fn x_max(&self) -> T {
        *self.nodes.last().expect("grid has nodes")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Solution `u(0, x)` on the grid nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueSurface<T> {
    pub nodes: Vec<T>,
    pub values: Vec<T>,
    /// Largest number of policy sweeps any time step needed.
    pub max_sweeps: usize,
}

impl<T: Scalar> ValueSurface<T> {
    /// Piecewise-linear interpolation.
    pub fn sample(&self, x0: T) -> Result<T, PdeError> {
        let (lo, hi) = (self.nodes[0], *self.nodes.last().expect("nodes"));
        if !(x0 >= lo && x0 <= hi) {
            return Err(PdeError::OutOfRange {
                x0: x0.as_f64(),
                lo: lo.as_f64(),
                hi: hi.as_f64(),
            });
        }
        let j = self.nodes.partition_point(|&n| n <= x0);
        if j == 0 {
            return Ok(self.values[0]);
        }
        if j >= self.nodes.len() {
            return Ok(*self.values.last().expect("values"));
        }
        let i = j - 1;
        if self.nodes[i] == x0 {
            return Ok(self.values[i]);
        }
        let w = (x0 - self.nodes[i]) / (self.nodes[j] - self.nodes[i]);
        Ok(self.values[i] + w * (self.values[j] - self.values[i]))
    }

    /// Central finite-difference slope `u_x` at `x0`.
    pub fn slope(&self, x0: T) -> Result<T, PdeError> {
        let j = self.nodes.partition_point(|&n| n <= x0).clamp(1, self.nodes.len() - 1);
        let i = j - 1;
        let _ = self.sample(x0)?;
        Ok((self.values[j] - self.values[i]) / (self.nodes[j] - self.nodes[i]))
    }
}

/// Uniform grid on `[0, x_max]` with `x_max` about twice the largest strike
/// or spot, every strike (and a fixed spot) placed on a node.
pub fn reference_grid<T: Scalar>(
    payoff: &Payoff<T>,
    spots: &[T],
    fixed_spot: Option<T>,
    n_nodes: usize,
    time_steps: usize,
) -> Result<Grid1D<T>, PdeError> {
    let strikes = payoff.strikes();
    let top = strikes
        .iter()
        .chain(spots)
        .copied()
        .fold(T::zero(), T::max);
    if !(top > T::zero()) {
        return Err(PdeError::InvalidGrid("need a positive strike or spot".into()));
    }
    let mut anchors = strikes;
    anchors.extend(fixed_spot);
    Grid1D::uniform_anchored(T::lit(2.0) * top, n_nodes, &anchors, time_steps)
}

pub fn sample_value<T: Scalar>(surface: &ValueSurface<T>, x0: T) -> Result<T, PdeError> {
    surface.sample(x0)
}

const MAX_SWEEPS: usize = 100;

/// Tridiagonal coefficients of `-L_r` at one interior node for a given rate:
/// `(L u)_i = alpha u_{i-1} + beta u_{i+1} - (alpha + beta + r) u_i`.
/// Central differencing for `r x u_x` is used when it keeps `alpha >= 0`,
/// otherwise forward differencing.
#[inline]
fn node_coeffs<T: Scalar>(x: &[T], i: usize, half_var: T, r: T) -> (T, T) {
    let hm = x[i] - x[i - 1];
    let hp = x[i + 1] - x[i];
    let diff = T::lit(2.0) * half_var * x[i] * x[i] / (hm + hp);
    let am = diff / hm;
    let ap = diff / hp;
    let drift = r * x[i];
    let central = drift / (hm + hp);
    if am - central >= T::zero() {
        (am - central, ap + central)
    } else {
        (am, ap + drift / hp)
    }
}

pub fn solve_hjb_1d<T: Scalar>(problem: &HjbProblem<T>, grid: &Grid1D<T>) -> Result<ValueSurface<T>, PdeError> {
    if problem.r_b < problem.r_l {
        return Err(PdeError::InvalidInput("r_b must be >= r_l".into()));
    }
    if !(problem.maturity > T::zero()) || !(problem.sigma_ln > T::zero()) {
        return Err(PdeError::InvalidInput("maturity and sigma must be positive".into()));
    }
    let x = grid.nodes();
    let n = x.len();
    let payoff = match problem.direction {
        Direction::Upper => problem.payoff.clone(),
        Direction::Lower => problem.payoff.clone().negated(),
    };
    let mut u: Vec<T> = x.iter().map(|&xi| payoff.eval_on_max(xi)).collect();
    let dt = problem.maturity / T::from_count(grid.time_steps);
    let half_var = T::lit(0.5) * problem.sigma_ln * problem.sigma_ln;
    let rates = [problem.r_l, problem.r_b];
    let tol = T::lit(1e-10);
    let mut max_sweeps = 0;

    let mut lower = vec![T::zero(); n];
    let mut diag = vec![T::zero(); n];
    let mut upper = vec![T::zero(); n];
    let mut policy = vec![0usize; n];
    for step in 0..grid.time_steps {
        let rhs = u.clone();
        let mut iterate = u.clone();
        let mut converged = false;
        for sweep in 1..=MAX_SWEEPS {
            // Pointwise control maximizing the discrete operator at the
            // current iterate.
            for i in 0..n {
                let best = (0..2)
                    .map(|k| {
                        let r = rates[k];
                        let v = if i == 0 {
                            -r * iterate[0]
                        } else if i == n - 1 {
                            let h = x[i] - x[i - 1];
                            r * (x[i] * (iterate[i] - iterate[i - 1]) / h - iterate[i])
                        } else {
                            let (a, b) = node_coeffs(x, i, half_var, r);
                            a * iterate[i - 1] + b * iterate[i + 1] - (a + b + r) * iterate[i]
                        };
                        (k, v)
                    })
                    .fold((0, T::neg_infinity()), |acc, kv| if kv.1 > acc.1 { kv } else { acc });
                policy[i] = best.0;
            }
            for i in 0..n {
                let r = rates[policy[i]];
                if i == 0 {
                    lower[i] = T::zero();
                    upper[i] = T::zero();
                    diag[i] = T::one() + dt * r;
                } else if i == n - 1 {
                    let h = x[i] - x[i - 1];
                    lower[i] = dt * r * x[i] / h;
                    upper[i] = T::zero();
                    diag[i] = T::one() - dt * r * (x[i] / h - T::one());
                } else {
                    let (a, b) = node_coeffs(x, i, half_var, r);
                    lower[i] = -dt * a;
                    upper[i] = -dt * b;
                    diag[i] = T::one() + dt * (a + b + r);
                }
            }
            let next = thomas(&lower, &diag, &upper, &rhs);
            let scale = next.iter().fold(T::one(), |m, v| m.max(v.abs()));
            let change = next
                .iter()
                .zip(&iterate)
                .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()));
            iterate = next;
            if change <= tol * scale {
                max_sweeps = max_sweeps.max(sweep);
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(PdeError::NoConvergence {
                step,
                sweeps: MAX_SWEEPS,
            });
        }
        u = iterate;
    }
    if problem.direction == Direction::Lower {
        for v in &mut u {
            *v = -*v;
        }
    }
    Ok(ValueSurface {
        nodes: x.to_vec(),
        values: u,
        max_sweeps,
    })
}

/// Tridiagonal solve; `lower[0]` and `upper[n-1]` are ignored.
fn thomas<T: Scalar>(lower: &[T], diag: &[T], upper: &[T], rhs: &[T]) -> Vec<T> {
    let n = diag.len();
    let mut c = vec![T::zero(); n];
    let mut d = vec![T::zero(); n];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * c[i - 1];
        c[i] = if i + 1 < n { upper[i] / m } else { T::zero() };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / m;
    }
    let mut out = vec![T::zero(); n];
    out[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        out[i] = d[i] - c[i] * out[i + 1];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Discounted expectation of `payoff` under the lognormal law by
    /// composite Simpson quadrature in the standard-normal variable.
    fn lognormal_quadrature(payoff: impl Fn(f64) -> f64, s: f64, r: f64, sigma: f64, t: f64) -> f64 {
        let n = 400_000;
        let (lo, hi) = (-12.0, 12.0);
        let h = (hi - lo) / n as f64;
        let f = |z: f64| {
            let st = s * ((r - 0.5 * sigma * sigma) * t + sigma * t.sqrt() * z).exp();
            payoff(st) * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
        };
        let mut acc = f(lo) + f(hi);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(lo + i as f64 * h);
        }
        (-r * t).exp() * acc * h / 3.0
    }

    #[test]
    fn straddle_matches_quadrature() {
        let bs = bs_price(BsKind::Straddle, 100.0, 100.0, 0.05, 0.3, 1.0).unwrap();
        let q = lognormal_quadrature(|x| (x - 100.0f64).abs(), 100.0, 0.05, 0.3, 1.0);
        assert!((bs - q).abs() / q < 1e-6, "{bs} vs {q}");
    }

    #[test]
    fn short_maturity_recovers_payoff() {
        for s in [80.0, 130.0] {
            let p = bs_price(BsKind::Straddle, s, 100.0, 0.05, 0.3, 1e-9).unwrap();
            assert!((p - (s - 100.0f64).abs()).abs() < 1e-4);
        }
        // at the kink the time value is ~0.8 sigma sqrt(T) S
        let p: f64 = bs_price(BsKind::Straddle, 100.0, 100.0, 0.05, 0.3, 1e-12).unwrap();
        assert!(p.abs() < 1e-4);
        let c: f64 = bs_price(BsKind::Call, 100.0, 100.0, 0.0, 1e-9, 1.0).unwrap();
        assert!(c.abs() < 1e-6);
    }

    #[test]
    fn bs_rejects_bad_inputs() {
        assert!(bs_price(BsKind::Call, 0.0, 100.0, 0.05, 0.3, 1.0).is_err());
        assert!(bs_price(BsKind::Call, 100.0, 100.0, 0.05, 0.3, 0.0).is_err());
    }

    fn straddle_problem(r_l: f64, r_b: f64, direction: Direction) -> HjbProblem<f64> {
        HjbProblem {
            sigma_ln: 0.3,
            r_l,
            r_b,
            payoff: Payoff::straddle(100.0),
            maturity: 1.0,
            direction,
        }
    }

    #[test]
    fn equal_rates_match_black_scholes() {
        let grid = Grid1D::uniform(200.0, 101, 100).unwrap();
        let s = solve_hjb_1d(&straddle_problem(0.05, 0.05, Direction::Upper), &grid).unwrap();
        let bs = bs_price(BsKind::Straddle, 100.0, 100.0, 0.05, 0.3, 1.0).unwrap();
        let u = s.sample(100.0).unwrap();
        assert!((u - bs).abs() / bs < 5e-3, "{u} vs {bs}");
    }

    #[test]
    fn terminal_condition_on_nodes() {
        let grid = Grid1D::uniform(200.0, 101, 1).unwrap();
        let mut p = straddle_problem(0.03, 0.05, Direction::Upper);
        p.maturity = 1e-12;
        let s = solve_hjb_1d(&p, &grid).unwrap();
        for (x, u) in s.nodes.iter().zip(&s.values) {
            assert!((u - (x - 100.0).abs()).abs() < 1e-8);
        }
    }

    #[test]
    fn upper_dominates_lower() {
        let grid = Grid1D::uniform(200.0, 101, 50).unwrap();
        let up = solve_hjb_1d(&straddle_problem(0.03, 0.05, Direction::Upper), &grid).unwrap();
        let lo = solve_hjb_1d(&straddle_problem(0.03, 0.05, Direction::Lower), &grid).unwrap();
        for (a, b) in up.values.iter().zip(&lo.values) {
            assert!(a + 1e-9 >= *b);
        }
    }

    #[test]
    fn interpolation() {
        let s = ValueSurface {
            nodes: vec![0.0, 1.0, 2.0],
            values: vec![1.0, 3.0, 4.0],
            max_sweeps: 1,
        };
        assert_eq!(sample_value(&s, 1.0).unwrap(), 3.0);
        assert_eq!(sample_value(&s, 0.5).unwrap(), 2.0);
        let v = sample_value(&s, 1.3).unwrap();
        assert!(v > 3.0 && v < 4.0);
        assert!(sample_value(&s, 2.5).is_err());
        assert!(sample_value(&s, -0.1).is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(Grid1D::new(vec![1.0, 2.0, 3.0], 10).is_err());
        assert!(Grid1D::new(vec![0.0, 2.0, 2.0], 10).is_err());
        assert!(Grid1D::<f64>::uniform(200.0, 101, 0).is_err());
        let g = Grid1D::uniform_anchored(190.0, 101, &[100.0], 10).unwrap();
        assert!(g.nodes().iter().any(|&x| (x - 100.0f64).abs() < 1e-9));
        assert!(g.x_max() >= 190.0 - 1e-9);
    }
}
