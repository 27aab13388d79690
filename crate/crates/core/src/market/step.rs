//! Single time-steps of the portfolio-value BSDE under differential rates.
//!
//! Holdings are measured by value, so the diffusion term of one step is
//! `sum_j pi_j * sigma_ln * dW_j`. On each side of the kink `sum(pi) = y` the
//! driver is linear in `y` and `sum(pi)`:
//!
//! ```text
//! borrowing (sum(pi) > y):  f = -r_b y + (r_b - r_l - e) sum(pi)
//! lending   (sum(pi) <= y): f = -r_l y - e sum(pi)
//! ```
//!
//! where `e = mu - r_l` for [`GeneratorForm::DriftAdjusted`] and `e = 0` for
//! [`GeneratorForm::PaperRiskNeutral`]. Solving `y - f dt = y_next - noise`
//! on one branch gives `y = (y_next + a sum(pi) dt - noise) / (1 + r dt)`.

use super::{GeneratorForm, MarketError, RatesSpec};
use crate::scalar::Scalar;

/// Coefficients shared by every step of one problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepParams<T> {
    pub mu: T,
    pub sigma_ln: T,
    pub rates: RatesSpec<T>,
    pub form: GeneratorForm,
    pub dt: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackstepMethod {
    Exact,
    Taylor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    /// Negative cash, accrues at the borrowing rate.
    Borrow,
    /// Non-negative cash, accrues at the lending rate.
    Lend,
}

/// Result of one backward step together with its local derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackStep<T> {
    pub y: T,
    pub branch: Branch,
    /// `1 + r dt` of the selected branch.
    pub denom: T,
    /// `a dt` of the selected branch.
    pub pi_dt_coeff: T,
}

impl<T: Scalar> BackStep<T> {
    /// d y / d y_next.
    #[inline]
    pub fn d_next(&self) -> T {
        T::one() / self.denom
    }

    /// d y / d pi_j given `sigma_ln * dW_j`.
    #[inline]
    pub fn d_pi(&self, sigma_dw: T) -> T {
        (self.pi_dt_coeff - sigma_dw) / self.denom
    }
}

impl<T: Scalar> StepParams<T> {
    /// Excess drift of the risky assets over the lending rate that the
    /// driver accounts for.
    #[inline]
    fn drift_excess(&self) -> T {
        match self.form {
            GeneratorForm::PaperRiskNeutral => T::zero(),
            GeneratorForm::DriftAdjusted => self.mu - self.rates.r_l,
        }
    }

    /// `(rate, a)` of a branch, where `f = -rate y + a sum(pi)`.
    #[inline]
    fn branch_coeffs(&self, branch: Branch) -> (T, T) {
        let e = self.drift_excess();
        let RatesSpec { r_l, r_b } = self.rates;
        match branch {
            Branch::Borrow => (r_b, r_b - r_l - e),
            Branch::Lend => (r_l, -e),
        }
    }

    /// Driver value and its derivative in `y`; the derivative takes the
    /// lending side at the tie `pi_sum == y`.
    pub fn generator(&self, y: T, pi_sum: T) -> (T, T) {
        let e = self.drift_excess();
        let RatesSpec { r_l, r_b } = self.rates;
        let f = -r_l * y - e * pi_sum + (r_b - r_l) * (pi_sum - y).max(T::zero());
        let df_dy = if pi_sum > y { -r_b } else { -r_l };
        (f, df_dy)
    }

    #[inline]
    pub fn noise(&self, pi: &[T], dw: &[T]) -> T {
        pi.iter().zip(dw).map(|(&p, &w)| p * self.sigma_ln * w).sum()
    }

    /// One explicit Euler step of the BSDE forward in time.
    pub fn forward(&self, y: T, pi: &[T], dw: &[T]) -> T {
        let pi_sum: T = pi.iter().copied().sum();
        let (f, _) = self.generator(y, pi_sum);
        y - f * self.dt + self.noise(pi, dw)
    }

    /// Forward step value plus `(d/dy, d/dpi_j without the noise term)`;
    /// `d/dpi_j = pi_coeff + sigma_ln dW_j`.
    pub fn forward_with_partials(&self, y: T, pi_sum: T, noise: T) -> (T, T, T) {
        let (f, df_dy) = self.generator(y, pi_sum);
        let e = self.drift_excess();
        let df_ds = if pi_sum > y {
            self.rates.r_b - self.rates.r_l - e
        } else {
            -e
        };
        (
            y - f * self.dt + noise,
            T::one() - df_dy * self.dt,
            -df_ds * self.dt,
        )
    }

    #[inline]
    fn solve_branch(&self, branch: Branch, y_next: T, pi_sum: T, noise: T) -> BackStep<T> {
        let (rate, a) = self.branch_coeffs(branch);
        let denom = T::one() + rate * self.dt;
        let pi_dt_coeff = a * self.dt;
        BackStep {
            y: (y_next + pi_dt_coeff * pi_sum - noise) / denom,
            branch,
            denom,
            pi_dt_coeff,
        }
    }

    /// Exact solution of the implicit step: each branch is solved in closed
    /// form and the one satisfying its own defining inequality is returned.
    pub fn backstep_exact_parts(&self, y_next: T, pi_sum: T, noise: T) -> Result<BackStep<T>, MarketError> {
        let borrow = self.solve_branch(Branch::Borrow, y_next, pi_sum, noise);
        let lend = self.solve_branch(Branch::Lend, y_next, pi_sum, noise);
        let borrow_ok = pi_sum > borrow.y;
        let lend_ok = pi_sum <= lend.y;
        match (borrow_ok, lend_ok) {
            (true, false) => Ok(borrow),
            (false, true) => Ok(lend),
            _ => {
                // Only reachable at the kink, where both branches coincide
                // up to rounding.
                let tol = T::lit(1e-9) * T::one().max(y_next.abs()).max(pi_sum.abs());
                if (borrow.y - lend.y).abs() <= tol {
                    Ok(lend)
                } else {
                    Err(MarketError::BackstepInconsistent {
                        y_next: y_next.as_f64(),
                        pi_sum: pi_sum.as_f64(),
                        borrow: borrow.y.as_f64(),
                        lend: lend.y.as_f64(),
                    })
                }
            }
        }
    }

    /// First-order Taylor step: driver and its derivative taken at `y_next`,
    /// so the branch is chosen by comparing `sum(pi)` with `y_next`.
    pub fn backstep_taylor_parts(&self, y_next: T, pi_sum: T, noise: T) -> BackStep<T> {
        let branch = if pi_sum > y_next {
            Branch::Borrow
        } else {
            Branch::Lend
        };
        self.solve_branch(branch, y_next, pi_sum, noise)
    }

    pub fn backstep_parts(
        &self,
        method: BackstepMethod,
        y_next: T,
        pi_sum: T,
        noise: T,
    ) -> Result<BackStep<T>, MarketError> {
        match method {
            BackstepMethod::Exact => self.backstep_exact_parts(y_next, pi_sum, noise),
            BackstepMethod::Taylor => Ok(self.backstep_taylor_parts(y_next, pi_sum, noise)),
        }
    }
}

pub fn eval_generator<T: Scalar>(
    form: GeneratorForm,
    rates: RatesSpec<T>,
    mu: T,
    y: T,
    pi_sum: T,
) -> (T, T) {
    StepParams {
        mu,
        sigma_ln: T::zero(),
        rates,
        form,
        dt: T::zero(),
    }
    .generator(y, pi_sum)
}

pub fn forward_y_step<T: Scalar>(y: T, pi: &[T], dw: &[T], params: &StepParams<T>) -> T {
    params.forward(y, pi, dw)
}

pub fn backstep_exact<T: Scalar>(
    y_next: T,
    pi: &[T],
    dw: &[T],
    params: &StepParams<T>,
) -> Result<T, MarketError> {
    let pi_sum = pi.iter().copied().sum();
    params
        .backstep_exact_parts(y_next, pi_sum, params.noise(pi, dw))
        .map(|s| s.y)
}

pub fn backstep_taylor<T: Scalar>(y_next: T, pi: &[T], dw: &[T], params: &StepParams<T>) -> T {
    let pi_sum = pi.iter().copied().sum();
    params
        .backstep_taylor_parts(y_next, pi_sum, params.noise(pi, dw))
        .y
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(r_l: f64, r_b: f64, mu: f64, form: GeneratorForm, dt: f64) -> StepParams<f64> {
        StepParams {
            mu,
            sigma_ln: 0.3,
            rates: RatesSpec::new(r_l, r_b).unwrap(),
            form,
            dt,
        }
    }

    /// Root of `y - f(y) dt = y_next - noise` by bisection, independent of
    /// the branch algebra.
    fn bisect(p: &StepParams<f64>, y_next: f64, pi: &[f64], dw: &[f64]) -> f64 {
        let pi_sum: f64 = pi.iter().sum();
        let rhs = y_next - p.noise(pi, dw);
        let phi = |y: f64| y - p.generator(y, pi_sum).0 * p.dt - rhs;
        let (mut lo, mut hi) = (-1e6, 1e6);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if phi(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn generator_lending_side() {
        let (f, d) = eval_generator(GeneratorForm::PaperRiskNeutral, RatesSpec::<f64>::new(0.03, 0.05).unwrap(), 0.05, 30.0, 20.0);
        assert!((f + 0.9).abs() < 1e-15);
        assert_eq!(d, -0.03);
    }

    #[test]
    fn generator_borrowing_side() {
        let (f, d) = eval_generator(GeneratorForm::PaperRiskNeutral, RatesSpec::<f64>::new(0.03, 0.05).unwrap(), 0.05, 10.0, 20.0);
        assert!((f + 0.1).abs() < 1e-15);
        assert_eq!(d, -0.05);
    }

    #[test]
    fn drift_adjusted_collapses_when_mu_is_lending_rate() {
        let rates = RatesSpec::new(0.03, 0.05).unwrap();
        for (y, s) in [(10.0, 20.0), (30.0, 20.0), (-5.0, 3.0), (7.0, 7.0)] {
            let a = eval_generator(GeneratorForm::PaperRiskNeutral, rates, 0.03, y, s);
            let b = eval_generator(GeneratorForm::DriftAdjusted, rates, 0.03, y, s);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn forward_step_examples() {
        let p = params(0.0, 0.0, 0.0, GeneratorForm::PaperRiskNeutral, 0.01);
        assert_eq!(forward_y_step(3.0, &[0.0], &[0.0], &p), 3.0);
        let p = params(0.05, 0.05, 0.05, GeneratorForm::PaperRiskNeutral, 0.01);
        assert!((forward_y_step(24.0, &[0.0], &[0.3], &p) - 24.012).abs() < 1e-12);
    }

    #[test]
    fn exact_step_examples() {
        let p = params(0.0, 0.0, 0.0, GeneratorForm::PaperRiskNeutral, 0.01);
        assert_eq!(backstep_exact(5.0, &[0.0], &[0.7], &p).unwrap(), 5.0);

        let p = params(0.03, 0.05, 0.05, GeneratorForm::PaperRiskNeutral, 0.01);
        let y = backstep_exact(24.0, &[30.0], &[0.0], &p).unwrap();
        let expected = 24.006 / 1.0005;
        assert!((y - expected).abs() < 1e-12);
        assert!((y - bisect(&p, 24.0, &[30.0], &[0.0])).abs() < 1e-9);
        assert!((y - 23.99401).abs() < 1e-5);
    }

    #[test]
    fn taylor_and_exact_choose_different_branches_near_kink() {
        let p = params(0.03, 0.05, 0.05, GeneratorForm::PaperRiskNeutral, 0.01);
        let taylor = p.backstep_taylor_parts(30.005, 30.0, 0.0);
        let exact = p.backstep_exact_parts(30.005, 30.0, 0.0).unwrap();
        assert_eq!(taylor.branch, Branch::Lend);
        assert_eq!(exact.branch, Branch::Borrow);
        assert!((taylor.y - 30.005 / 1.0003).abs() < 1e-12);
        assert!((exact.y - 30.011 / 1.0005).abs() < 1e-12);
        assert!((taylor.y - exact.y).abs() < 1e-4);
    }

    #[test]
    fn taylor_matches_linearized_formula() {
        // y = y_next + (f(y_next) dt - noise) / (1 - f'(y_next) dt)
        let p = params(0.04, 0.06, 0.06, GeneratorForm::DriftAdjusted, 0.01);
        for &(y_next, pi, dw) in &[(24.0, 30.0, 0.05), (30.0, 10.0, -0.1), (-3.0, 5.0, 0.02)] {
            let noise = pi * p.sigma_ln * dw;
            let (f, d) = p.generator(y_next, pi);
            let lin = y_next + (f * p.dt - noise) / (1.0 - d * p.dt);
            let t = backstep_taylor(y_next, &[pi], &[dw], &p);
            assert!((lin - t).abs() < 1e-12, "{lin} vs {t}");
        }
    }

    #[test]
    fn inconsistent_inputs_are_reported() {
        // 1 + r dt < 0 breaks monotonicity of the implicit map
        let p = StepParams {
            mu: 0.0,
            sigma_ln: 0.3,
            rates: RatesSpec { r_l: -50.0, r_b: 50.0 },
            form: GeneratorForm::PaperRiskNeutral,
            dt: 0.1,
        };
        let mut seen_error = false;
        for i in -20..20 {
            if p.backstep_exact_parts(i as f64, 1.0, 0.0).is_err() {
                seen_error = true;
            }
        }
        assert!(seen_error);
    }

    fn arb_state() -> impl Strategy<Value = (f64, f64, f64, f64, f64, bool)> {
        (
            -200.0..200.0f64,
            -200.0..200.0f64,
            -0.3..0.3f64,
            0.0..0.08f64,
            0.0..0.05f64,
            any::<bool>(),
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn exact_matches_bisection((y_next, pi, dw, r_l, spread, adj) in arb_state()) {
            let form = if adj { GeneratorForm::DriftAdjusted } else { GeneratorForm::PaperRiskNeutral };
            let p = params(r_l, r_l + spread, 0.05, form, 0.01);
            let y = backstep_exact(y_next, &[pi], &[dw], &p).unwrap();
            prop_assert!((y - bisect(&p, y_next, &[pi], &[dw])).abs() <= 1e-9);
        }

        #[test]
        fn exact_inverts_forward((y, pi, dw, r_l, spread, adj) in arb_state()) {
            let form = if adj { GeneratorForm::DriftAdjusted } else { GeneratorForm::PaperRiskNeutral };
            let p = params(r_l, r_l + spread, 0.06, form, 0.01);
            let next = forward_y_step(y, &[pi], &[dw], &p);
            let back = backstep_exact(next, &[pi], &[dw], &p).unwrap();
            prop_assert!((back - y).abs() <= 1e-10 * y.abs().max(1.0));
        }

        #[test]
        fn exact_is_monotone(a in -200.0..200.0f64, b in -200.0..200.0f64, pi in -200.0..200.0f64, dw in -0.3..0.3f64) {
            let p = params(0.03, 0.05, 0.05, GeneratorForm::DriftAdjusted, 0.01);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let ylo = backstep_exact(lo, &[pi], &[dw], &p).unwrap();
            let yhi = backstep_exact(hi, &[pi], &[dw], &p).unwrap();
            prop_assert!(ylo <= yhi);
        }

        #[test]
        fn taylor_is_close_to_exact((y_next, pi, dw, r_l, spread, adj) in arb_state()) {
            let form = if adj { GeneratorForm::DriftAdjusted } else { GeneratorForm::PaperRiskNeutral };
            let p = params(r_l, r_l + spread, 0.05, form, 0.01);
            let e = p.backstep_exact_parts(y_next, pi, pi * p.sigma_ln * dw).unwrap();
            let t = p.backstep_taylor_parts(y_next, pi, pi * p.sigma_ln * dw);
            if e.branch == t.branch {
                prop_assert_eq!(e.y.to_bits(), t.y.to_bits());
            } else {
                // the two closed forms differ by (r_b - r_l) dt |y - sum(pi)| / (1 + r dt)
                let gap = (e.y - pi).abs().max((t.y - pi).abs());
                let envelope = spread * gap * p.dt / (1.0 + r_l * p.dt) + 1e-10;
                prop_assert!((e.y - t.y).abs() <= envelope);
            }
        }

        #[test]
        fn generator_is_lipschitz_in_y(y in -200.0..200.0f64, s in -200.0..200.0f64, d in 0.0..1.0f64) {
            let rates = RatesSpec::new(0.03, 0.05).unwrap();
            let (f0, _) = eval_generator(GeneratorForm::DriftAdjusted, rates, 0.05, y, s);
            let (f1, _) = eval_generator(GeneratorForm::DriftAdjusted, rates, 0.05, y + d, s);
            prop_assert!((f1 - f0).abs() <= 0.05 * d + 1e-12);
        }
    }
}
