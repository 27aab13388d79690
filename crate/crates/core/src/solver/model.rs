use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{MeanEstimate, SolverConfig, SolverError, SolverVariant, StrategyKind};
use crate::market::{
    mix_seed, simulate_path_batch, BackstepMethod, Branch, FbsdeProblem, PathBatch, StepParams,
    TimeGrid, X0Sampler,
};
use crate::nn::{Mlp, MlpSpec, ParamStore, Prescaler, Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Trading strategy networks. Every network outputs the holding size
/// (delta) per asset; the currency value is `delta * x`.
#[derive(Clone, Debug, PartialEq)]
pub enum StrategyModel {
    SharedNet { net: Mlp },
    PerStepNets { nets: Vec<Mlp> },
}

/// An initial-value readout.
#[derive(Clone, Debug, PartialEq)]
pub enum ValueHead {
    /// Scalar parameter at `offset`.
    Scalar { offset: usize },
    /// `value_scale * net(prescaled x)`.
    Network { net: Mlp },
}

/// Tape handles produced by one rollout.
#[derive(Clone, Debug)]
pub struct Rollout {
    /// Portfolio value at every time index, each `1 x batch`.
    pub y: Vec<Var>,
    pub loss: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeepBsdeModel<T> {
    problem: FbsdeProblem<T>,
    sampler: X0Sampler<T>,
    variant: SolverVariant,
    backstep: BackstepMethod,
    store: ParamStore<T>,
    strategy: StrategyModel,
    /// Delta held over the first step (fixed-X0 forward method).
    initial_delta: Option<usize>,
    y0_head: Option<ValueHead>,
    intermediate: Vec<(usize, ValueHead)>,
    x_scale: Prescaler<T>,
    t_shift: T,
    t_scale: T,
    value_scale: T,
}

impl<T: Scalar> DeepBsdeModel<T> {
    pub fn new(problem: &FbsdeProblem<T>, sampler: &X0Sampler<T>, config: &SolverConfig) -> Result<Self, SolverError> {
        problem.validate()?;
        sampler.validate()?;
        let variant = config.variant.clone();
        if variant.needs_fixed_x0() != sampler.is_fixed() {
            return Err(SolverError::InvalidConfig(format!(
                "{} needs a {} initial spot",
                variant.label(),
                if variant.needs_fixed_x0() { "fixed" } else { "random" }
            )));
        }
        if matches!(variant, SolverVariant::BackwardBatchVariance { .. }) && config.batch_size < 2 {
            return Err(SolverError::InvalidConfig(
                "variance loss needs a batch size of at least 2".into(),
            ));
        }
        if config.batch_size == 0 {
            return Err(SolverError::InvalidConfig("batch size must be positive".into()));
        }
        if let SolverVariant::BackwardBatchVariance {
            estimate: MeanEstimate::RollingMean { window: 0 },
        } = variant
        {
            return Err(SolverError::InvalidConfig("rolling-mean window must be positive".into()));
        }
        let n_steps = problem.grid.n_steps;
        if let SolverVariant::BackwardYinitNetwork { intermediate_times } = &variant {
            if let Some(bad) = intermediate_times.iter().find(|&&i| i == 0 || i >= n_steps) {
                return Err(SolverError::InvalidConfig(format!(
                    "intermediate time index {bad} outside 1..{n_steps}"
                )));
            }
        }

        let dim = problem.model.dim;
        let hidden = config.hidden_widths.clone().unwrap_or_else(|| vec![dim + 10; 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();

        let strategy = match config.strategy_kind() {
            StrategyKind::SharedNet => StrategyModel::SharedNet {
                net: Mlp::register(&mut store, "strategy", &MlpSpec::new(dim + 1, hidden.clone(), dim), &mut rng)?,
            },
            StrategyKind::PerStepNets => {
                let spec = MlpSpec::new(dim, hidden.clone(), dim);
                let nets = (0..n_steps)
                    .map(|i| Mlp::register(&mut store, &format!("strategy.{i}"), &spec, &mut rng))
                    .collect::<Result<_, _>>()?;
                StrategyModel::PerStepNets { nets }
            }
        };

        let value_spec = MlpSpec::new(dim, hidden, 1);
        let mut network_head = |store: &mut ParamStore<T>, name: &str| -> Result<ValueHead, SolverError> {
            Ok(ValueHead::Network {
                net: Mlp::register(store, name, &value_spec, &mut rng)?,
            })
        };
        let mut initial_delta = None;
        let mut intermediate = Vec::new();
        let y0_head = match &variant {
            SolverVariant::ForwardFixed => {
                initial_delta = Some(store.push("initial_delta", vec![dim], vec![T::zero(); dim]));
                Some(ValueHead::Scalar {
                    offset: store.push("y0", vec![1], vec![T::zero()]),
                })
            }
            SolverVariant::BackwardLearnedY0 => Some(ValueHead::Scalar {
                offset: store.push("y0", vec![1], vec![T::zero()]),
            }),
            SolverVariant::ForwardRandom => Some(network_head(&mut store, "yinit")?),
            SolverVariant::BackwardYinitNetwork { intermediate_times } => {
                let head = network_head(&mut store, "yinit")?;
                for &i in intermediate_times {
                    intermediate.push((i, network_head(&mut store, &format!("ylearned.{i}"))?));
                }
                Some(head)
            }
            SolverVariant::BackwardBatchVariance { .. } => None,
        };

        let horizon = problem.grid.horizon();
        let half = T::lit(0.5);
        let (shift, scale) = match *sampler {
            X0Sampler::Fixed(x) => (x, x * problem.model.sigma_ln * horizon.sqrt()),
            X0Sampler::Uniform { lo, hi } => ((lo + hi) * half, (hi - lo) * half),
        };
        let x_scale = Prescaler::new(vec![shift; dim], vec![scale; dim])?;
        let value_scale = sampler.center() * problem.model.sigma_ln * horizon.sqrt();

        Ok(Self {
            problem: problem.clone(),
            sampler: *sampler,
            variant,
            backstep: config.backstep,
            store,
            strategy,
            initial_delta,
            y0_head,
            intermediate,
            x_scale,
            t_shift: problem.grid.t0 + horizon * half,
            t_scale: horizon * half,
            value_scale,
        })
    }

    pub fn problem(&self) -> &FbsdeProblem<T> {
        &self.problem
    }

    pub fn sampler(&self) -> &X0Sampler<T> {
        &self.sampler
    }

    pub fn variant(&self) -> &SolverVariant {
        &self.variant
    }

    pub fn backstep(&self) -> BackstepMethod {
        self.backstep
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn strategy(&self) -> &StrategyModel {
        &self.strategy
    }

    pub fn y0_head(&self) -> Option<&ValueHead> {
        self.y0_head.as_ref()
    }

    /// Time indices that carry an intermediate value network.
    pub fn intermediate_times(&self) -> Vec<usize> {
        self.intermediate.iter().map(|(i, _)| *i).collect()
    }

    /// Starts every value readout at the discounted mean payoff of `paths`,
    /// so training does not spend its first thousands of steps walking the
    /// output bias up to the price level.
    pub fn warm_start(&mut self, paths: &PathBatch<T>) {
        let n = paths.n_steps();
        let terminal = self.terminal_values(paths, n);
        let mean = terminal.iter().copied().sum::<T>() / T::from_count(terminal.len());
        let r = self.problem.rates.r_l;
        let grid = self.problem.grid;
        let discounted = |step: usize| mean * (-r * (grid.maturity - grid.time(step))).exp();
        let value_scale = self.value_scale;
        let set = |store: &mut ParamStore<T>, head: &ValueHead, v: T| match head {
            ValueHead::Scalar { offset } => store.values_mut()[*offset] = v,
            ValueHead::Network { net } => store.values_mut()[net.output_bias_offset()] = v / value_scale,
        };
        if let Some(head) = &self.y0_head {
            set(&mut self.store, head, discounted(0));
        }
        for (i, head) in &self.intermediate {
            set(&mut self.store, head, discounted(*i));
        }
    }

    fn terminal_values(&self, paths: &PathBatch<T>, step: usize) -> Vec<T> {
        (0..paths.batch())
            .map(|p| self.problem.payoff.eval(&paths.x_point(p, step)))
            .collect()
    }

    fn scaled_x(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut out = x.clone();
        for d in 0..out.rows() {
            for v in out.row_mut(d) {
                *v = self.x_scale.apply_at(d, *v);
            }
        }
        out
    }

    fn scaled_t(&self, step: usize) -> T {
        (self.problem.grid.time(step) - self.t_shift) / self.t_scale
    }

    /// Records the value of the risky holdings at `step` for states `x`
    /// (`dim x batch`).
    fn strategy_pi(&self, tape: &mut Tape<'_, T>, step: usize, x: &Tensor<T>) -> Var {
        let delta = match (&self.strategy, self.initial_delta) {
            (_, Some(offset)) if step == 0 => {
                let d = tape.param(offset, x.rows(), 1);
                tape.broadcast(d, x.cols())
            }
            (StrategyModel::PerStepNets { nets }, _) => {
                let input = tape.constant(self.scaled_x(x));
                nets[step].apply(tape, input)
            }
            (StrategyModel::SharedNet { net }, _) => {
                let xs = self.scaled_x(x);
                let mut input = Tensor::zeros(x.rows() + 1, x.cols());
                input.row_mut(0).fill(self.scaled_t(step));
                for d in 0..x.rows() {
                    input.row_mut(d + 1).copy_from_slice(xs.row(d));
                }
                let input = tape.constant(input);
                net.apply(tape, input)
            }
        };
        let xv = tape.constant(x.clone());
        tape.mul(delta, xv)
    }

    fn head_value(&self, tape: &mut Tape<'_, T>, head: &ValueHead, x: &Tensor<T>) -> Var {
        match head {
            ValueHead::Scalar { offset } => {
                let p = tape.param(*offset, 1, 1);
                tape.broadcast(p, x.cols())
            }
            ValueHead::Network { net } => {
                let input = tape.constant(self.scaled_x(x));
                let out = net.apply(tape, input);
                tape.scale(out, self.value_scale)
            }
        }
    }

    fn step_params(&self, dt: T) -> StepParams<T> {
        StepParams {
            dt,
            ..self.problem.step_params()
        }
    }

    /// One backward step as a custom tape node with inputs `(y_next, pi)`.
    fn backstep_node(
        &self,
        tape: &mut Tape<'_, T>,
        sp: &StepParams<T>,
        y_next: Var,
        pi: Var,
        dw: &Tensor<T>,
    ) -> Result<Var, SolverError> {
        let (dim, batch) = dw.shape();
        let mut value = Tensor::zeros(1, batch);
        let mut d_next = Tensor::zeros(1, batch);
        let mut d_pi = Tensor::zeros(dim, batch);
        let yv = tape.value(y_next);
        let pv = tape.value(pi);
        for c in 0..batch {
            let mut pi_sum = T::zero();
            let mut noise = T::zero();
            for d in 0..dim {
                let p = pv.get(d, c);
                pi_sum = pi_sum + p;
                noise = noise + p * sp.sigma_ln * dw.get(d, c);
            }
            let s = sp.backstep_parts(self.backstep, yv.get(0, c), pi_sum, noise)?;
            value.set(0, c, s.y);
            d_next.set(0, c, s.d_next());
            for d in 0..dim {
                d_pi.set(d, c, s.d_pi(sp.sigma_ln * dw.get(d, c)));
            }
        }
        Ok(tape.columnwise(vec![y_next, pi], value, vec![d_next, d_pi]))
    }

    fn forward_node(&self, tape: &mut Tape<'_, T>, sp: &StepParams<T>, y: Var, pi: Var, dw: &Tensor<T>) -> Var {
        let (dim, batch) = dw.shape();
        let mut value = Tensor::zeros(1, batch);
        let mut d_y = Tensor::zeros(1, batch);
        let mut d_pi = Tensor::zeros(dim, batch);
        let yv = tape.value(y);
        let pv = tape.value(pi);
        for c in 0..batch {
            let mut pi_sum = T::zero();
            let mut noise = T::zero();
            for d in 0..dim {
                let p = pv.get(d, c);
                pi_sum = pi_sum + p;
                noise = noise + p * sp.sigma_ln * dw.get(d, c);
            }
            let (next, dy, pi_coeff) = sp.forward_with_partials(yv.get(0, c), pi_sum, noise);
            value.set(0, c, next);
            d_y.set(0, c, dy);
            for d in 0..dim {
                d_pi.set(d, c, pi_coeff + sp.sigma_ln * dw.get(d, c));
            }
        }
        tape.columnwise(vec![y, pi], value, vec![d_y, d_pi])
    }

    /// Rolls the portfolio value back from the payoff along `paths`, whose
    /// first time index is `step_offset` on the model's grid. Returns the
    /// values at every path time index.
    pub fn rollback_on_tape(
        &self,
        tape: &mut Tape<'_, T>,
        paths: &PathBatch<T>,
        step_offset: usize,
    ) -> Result<Vec<Var>, SolverError> {
        let n = paths.n_steps();
        if step_offset + n != self.problem.grid.n_steps {
            return Err(SolverError::InvalidConfig(format!(
                "paths of {n} steps from index {step_offset} do not end at maturity"
            )));
        }
        let sp = self.step_params(self.problem.grid.dt());
        let terminal = Tensor::row_vector(self.terminal_values(paths, n));
        let mut y = vec![tape.constant(terminal)];
        for i in (0..n).rev() {
            let pi = self.strategy_pi(tape, step_offset + i, &paths.x_at(i));
            let next = *y.last().expect("non-empty");
            y.push(self.backstep_node(tape, &sp, next, pi, &paths.dw_at(i))?);
        }
        y.reverse();
        Ok(y)
    }

    /// Rolls the portfolio value forward from the initial readout.
    pub fn rollforward_on_tape(&self, tape: &mut Tape<'_, T>, paths: &PathBatch<T>) -> Result<Vec<Var>, SolverError> {
        let head = self
            .y0_head
            .as_ref()
            .ok_or_else(|| SolverError::InvalidConfig("forward rollout needs an initial value".into()))?;
        let sp = self.step_params(self.problem.grid.dt());
        let mut y = vec![self.head_value(tape, head, &paths.x_at(0))];
        for i in 0..paths.n_steps() {
            let pi = self.strategy_pi(tape, i, &paths.x_at(i));
            let prev = *y.last().expect("non-empty");
            y.push(self.forward_node(tape, &sp, prev, pi, &paths.dw_at(i)));
        }
        Ok(y)
    }

    /// Records the full loss program of the variant.
    pub fn record_loss(&self, tape: &mut Tape<'_, T>, paths: &PathBatch<T>) -> Result<Rollout, SolverError> {
        if paths.n_steps() != self.problem.grid.n_steps || paths.dim() != self.problem.model.dim {
            return Err(SolverError::InvalidConfig("path batch does not match the problem".into()));
        }
        let batch = paths.batch();
        let squared_mean = |tape: &mut Tape<'_, T>, a: Var, b: Var| {
            let d = tape.sub(a, b);
            let sq = tape.square(d);
            tape.mean(sq)
        };
        match &self.variant {
            SolverVariant::ForwardFixed | SolverVariant::ForwardRandom => {
                let y = self.rollforward_on_tape(tape, paths)?;
                let g = tape.constant(Tensor::row_vector(self.terminal_values(paths, paths.n_steps())));
                let loss = squared_mean(tape, y[paths.n_steps()], g);
                Ok(Rollout { y, loss })
            }
            SolverVariant::BackwardBatchVariance { .. } => {
                if batch < 2 {
                    return Err(SolverError::InvalidConfig(
                        "variance loss needs a batch size of at least 2".into(),
                    ));
                }
                let y = self.rollback_on_tape(tape, paths, 0)?;
                let m = tape.mean(y[0]);
                let loss = squared_mean(tape, y[0], m);
                Ok(Rollout { y, loss })
            }
            SolverVariant::BackwardLearnedY0 | SolverVariant::BackwardYinitNetwork { .. } => {
                let y = self.rollback_on_tape(tape, paths, 0)?;
                let head = self.y0_head.as_ref().expect("backward heads are registered");
                let target = self.head_value(tape, head, &paths.x_at(0));
                let mut loss = squared_mean(tape, y[0], target);
                for (i, head) in &self.intermediate {
                    let target = self.head_value(tape, head, &paths.x_at(*i));
                    let term = squared_mean(tape, y[*i], target);
                    loss = tape.add(loss, term);
                }
                Ok(Rollout { y, loss })
            }
        }
    }

    /// Loss at an arbitrary parameter vector (for finite-difference checks).
    pub fn loss_value(&self, params: &[T], paths: &PathBatch<T>) -> Result<T, SolverError> {
        let mut tape = Tape::new(params);
        let r = self.record_loss(&mut tape, paths)?;
        Ok(tape.value(r.loss).as_slice()[0])
    }

    /// Loss, its gradient and the mean of the time-0 values on the batch.
    pub fn loss_and_grad(&self, paths: &PathBatch<T>) -> Result<(T, Vec<T>, T), SolverError> {
        let mut tape = Tape::new(self.store.values());
        let r = self.record_loss(&mut tape, paths)?;
        let grad = tape.backward(r.loss)?;
        Ok((tape.value(r.loss).as_slice()[0], grad, tape.value(r.y[0]).mean()))
    }

    /// Rolled-back values `(y0, y_all)` with `y_all[i]` the values at time
    /// index `i` over the batch.
    pub fn rollback_values(&self, paths: &PathBatch<T>) -> Result<(Vec<T>, Vec<Vec<T>>), SolverError> {
        let mut tape = Tape::new(self.store.values());
        let y = self.rollback_on_tape(&mut tape, paths, 0)?;
        let all: Vec<Vec<T>> = y.iter().map(|v| tape.value(*v).as_slice().to_vec()).collect();
        Ok((all[0].clone(), all))
    }

    /// Terminal values of the forward rollout.
    pub fn rollforward_values(&self, paths: &PathBatch<T>) -> Result<Vec<T>, SolverError> {
        let mut tape = Tape::new(self.store.values());
        let y = self.rollforward_on_tape(&mut tape, paths)?;
        Ok(tape.value(y[paths.n_steps()]).as_slice().to_vec())
    }

    /// Holding size per asset at time index `step` and state `x`.
    pub fn delta_at(&self, step: usize, x: &[T]) -> Result<Vec<T>, SolverError> {
        if step >= self.problem.grid.n_steps {
            return Err(SolverError::InvalidConfig(format!("no strategy at time index {step}")));
        }
        if let (Some(offset), 0) = (self.initial_delta, step) {
            return Ok(self.store.values()[offset..offset + x.len()].to_vec());
        }
        let xs = self.x_scale.apply(x)?;
        let out = match &self.strategy {
            StrategyModel::PerStepNets { nets } => nets[step].eval(self.store.values(), &xs)?,
            StrategyModel::SharedNet { net } => {
                let mut input = vec![self.scaled_t(step)];
                input.extend(xs);
                net.eval(self.store.values(), &input)?
            }
        };
        Ok(out)
    }

    /// Value from a learned readout at `step`, if the model has one there.
    pub fn value_at(&self, step: usize, x: &[T]) -> Result<Option<T>, SolverError> {
        let head = if step == 0 {
            self.y0_head.as_ref()
        } else {
            self.intermediate.iter().find(|(i, _)| *i == step).map(|(_, h)| h)
        };
        let Some(head) = head else { return Ok(None) };
        Ok(Some(self.eval_head(head, x)?))
    }

    fn eval_head(&self, head: &ValueHead, x: &[T]) -> Result<T, SolverError> {
        Ok(match head {
            ValueHead::Scalar { offset } => self.store.values()[*offset],
            ValueHead::Network { net } => {
                let xs = self.x_scale.apply(x)?;
                net.eval(self.store.values(), &xs)?[0] * self.value_scale
            }
        })
    }

    /// Learned initial value at `x0` (scalar heads ignore `x0`).
    pub fn learned_y0(&self, x0: &[T]) -> Result<Option<T>, SolverError> {
        self.value_at(0, x0)
    }

    /// Monte Carlo rollback with the frozen strategy from state `x` (every
    /// asset at `x`) at time index `step`: `(mean, standard error)` over
    /// `n_paths` fresh paths.
    pub fn rollback_mean_from(&self, step: usize, x: T, n_paths: usize, seed: u64) -> Result<(T, T), SolverError> {
        let grid = self.problem.grid;
        if step >= grid.n_steps || n_paths < 2 {
            return Err(SolverError::InvalidConfig(format!(
                "need step < {} and at least 2 paths",
                grid.n_steps
            )));
        }
        let sub_grid = TimeGrid::new(grid.time(step), grid.maturity, grid.n_steps - step)?;
        const CHUNK: usize = 1024;
        let mut values = Vec::with_capacity(n_paths);
        let mut chunk = 0u64;
        while values.len() < n_paths {
            let size = CHUNK.min(n_paths - values.len());
            let paths = simulate_path_batch(&self.problem.model, &sub_grid, &X0Sampler::Fixed(x), size, mix_seed(seed, chunk))?;
            let mut tape = Tape::new(self.store.values());
            let y = self.rollback_on_tape(&mut tape, &paths, step)?;
            values.extend_from_slice(tape.value(y[0]).as_slice());
            chunk += 1;
        }
        Ok(mean_and_std_err(&values))
    }

    /// Branch taken at the learned state: borrowing iff `sum(pi) > y`.
    pub fn branch_at(pi_sum: T, y: T) -> Branch {
        if pi_sum > y {
            Branch::Borrow
        } else {
            Branch::Lend
        }
    }
}

pub(super) fn mean_and_std_err<T: Scalar>(values: &[T]) -> (T, T) {
    let n = T::from_count(values.len());
    let mean = values.iter().copied().sum::<T>() / n;
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / (n - T::one());
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{GbmModel, GeneratorForm, Payoff, RatesSpec};
    use crate::nn::Tensor;

    fn straddle(r_l: f64, r_b: f64, mu: f64, sigma: f64, n: usize) -> FbsdeProblem<f64> {
        FbsdeProblem {
            model: GbmModel { dim: 1, mu, sigma_ln: sigma },
            rates: RatesSpec { r_l, r_b },
            grid: TimeGrid::new(0.0, 1.0, n).unwrap(),
            payoff: Payoff::straddle(100.0),
            generator: GeneratorForm::DriftAdjusted,
        }
    }

    /// Zeroes every strategy output layer so that delta == 0.
    fn zero_strategy(model: &mut DeepBsdeModel<f64>) {
        let layout = model.params().layout().to_vec();
        for e in layout.iter().filter(|e| e.name.starts_with("strategy") && e.name.contains(".l2.")) {
            model.params_mut().values_mut()[e.offset..e.offset + e.len()].fill(0.0);
        }
    }

    fn config(variant: SolverVariant) -> SolverConfig {
        SolverConfig::new(variant, BackstepMethod::Exact)
    }

    #[test]
    fn one_step_zero_rates_returns_payoff() {
        let p = straddle(0.0, 0.0, 0.0, 0.3, 1);
        let mut m = DeepBsdeModel::new(&p, &X0Sampler::Fixed(100.0), &config(SolverVariant::BackwardLearnedY0)).unwrap();
        zero_strategy(&mut m);
        let paths = simulate_path_batch(&p.model, &p.grid, &X0Sampler::Fixed(100.0), 16, 3).unwrap();
        let (y0, all) = m.rollback_values(&paths).unwrap();
        for (i, v) in y0.iter().enumerate() {
            assert_eq!(*v, (paths.x(i, 1, 0) - 100.0).abs());
        }
        assert_eq!(all.len(), 2);
    }

    #[test]
    fn deterministic_straddle_rollback() {
        // sigma = 0 and delta = 0: y0 = g(X_T) / (1 + r dt)^N
        let mut p = straddle(0.05, 0.05, 0.05, 0.3, 100);
        let mut m = DeepBsdeModel::new(&p, &X0Sampler::Fixed(100.0), &config(SolverVariant::BackwardLearnedY0)).unwrap();
        zero_strategy(&mut m);
        p.model.sigma_ln = 1e-300;
        let paths = simulate_path_batch(&p.model, &p.grid, &X0Sampler::Fixed(100.0), 4, 9).unwrap();
        let (y0, _) = m.rollback_values(&paths).unwrap();
        let xt = 100.0 * 1.0005_f64.powi(100);
        let expected = (xt - 100.0) / 1.0005_f64.powi(100);
        for v in y0 {
            assert!((v - expected).abs() < 1e-9, "{v} vs {expected}");
            assert!((v - 4.87586).abs() < 1e-5);
        }
    }

    #[test]
    fn forward_rollout_examples() {
        let p = straddle(0.0, 0.0, 0.0, 0.3, 1);
        let mut m = DeepBsdeModel::new(&p, &X0Sampler::Fixed(100.0), &config(SolverVariant::ForwardFixed)).unwrap();
        let y0 = match m.y0_head() {
            Some(ValueHead::Scalar { offset }) => *offset,
            _ => unreachable!(),
        };
        let paths = simulate_path_batch(&p.model, &p.grid, &X0Sampler::Fixed(100.0), 8, 1).unwrap();
        m.params_mut().values_mut()[y0] = 7.0;
        assert!(m.rollforward_values(&paths).unwrap().iter().all(|&v| v == 7.0));

        // one step with constant delta 0.5: y_T = y0 + pi sigma dW
        let delta = m.params().entry("initial_delta").unwrap().offset;
        m.params_mut().values_mut()[delta] = 0.5;
        let yt = m.rollforward_values(&paths).unwrap();
        for (i, v) in yt.iter().enumerate() {
            let expected = 7.0 + 50.0 * 0.3 * paths.dw(i, 0, 0);
            assert!((v - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn learned_y0_loss_arithmetic() {
        // y0 = {1, 3}, theta = 2 -> loss 1
        let params = [2.0_f64];
        let mut tape = Tape::new(&params);
        let y0 = tape.constant(Tensor::row_vector(vec![1.0, 3.0]));
        let theta = tape.param(0, 1, 1);
        let theta = tape.broadcast(theta, 2);
        let d = tape.sub(y0, theta);
        let sq = tape.square(d);
        let loss = tape.mean(sq);
        assert_eq!(tape.value(loss).as_slice()[0], 1.0);
    }

    #[test]
    fn sampler_must_match_variant() {
        let p = straddle(0.03, 0.05, 0.05, 0.3, 10);
        let uniform = X0Sampler::Uniform { lo: 50.0, hi: 150.0 };
        assert!(DeepBsdeModel::new(&p, &uniform, &config(SolverVariant::BackwardLearnedY0)).is_err());
        let yinit = SolverVariant::BackwardYinitNetwork {
            intermediate_times: vec![],
        };
        assert!(DeepBsdeModel::new(&p, &X0Sampler::Fixed(100.0), &config(yinit.clone())).is_err());
        assert!(DeepBsdeModel::new(&p, &uniform, &config(yinit)).is_ok());
        let bad = SolverVariant::BackwardYinitNetwork {
            intermediate_times: vec![10],
        };
        assert!(DeepBsdeModel::new(&p, &uniform, &config(bad)).is_err());
    }

    #[test]
    fn variance_loss_needs_two_paths() {
        let p = straddle(0.03, 0.05, 0.05, 0.3, 5);
        let v = SolverVariant::BackwardBatchVariance {
            estimate: MeanEstimate::LastBatchMean,
        };
        let mut c = config(v);
        c.batch_size = 1;
        assert!(DeepBsdeModel::new(&p, &X0Sampler::Fixed(100.0), &c).is_err());
        c.batch_size = 2;
        let m = DeepBsdeModel::new(&p, &X0Sampler::Fixed(100.0), &c).unwrap();
        let one = simulate_path_batch(&p.model, &p.grid, &X0Sampler::Fixed(100.0), 1, 0).unwrap();
        assert!(m.loss_value(m.params().values(), &one).is_err());
    }

    #[test]
    fn variance_loss_ignores_translation() {
        // with zero rates every backstep is affine with unit slope in
        // y_next, so adding c to the payoff adds c to every y0
        let v = SolverVariant::BackwardBatchVariance {
            estimate: MeanEstimate::LastBatchMean,
        };
        let call = |strike: f64| Payoff::CallCombination {
            strike_low: strike,
            strike_high: 1e9,
            long_weight: 1.0,
            short_weight: 0.0,
        };
        let mut p = straddle(0.0, 0.0, 0.05, 0.3, 5);
        p.payoff = call(0.0);
        let paths = simulate_path_batch(&p.model, &p.grid, &X0Sampler::Fixed(100.0), 32, 5).unwrap();
        let plain = DeepBsdeModel::new(&p, &X0Sampler::Fixed(100.0), &config(v.clone())).unwrap();
        let l_plain = plain.loss_value(plain.params().values(), &paths).unwrap();
        p.payoff = call(-1000.0);
        let shifted = DeepBsdeModel::new(&p, &X0Sampler::Fixed(100.0), &config(v)).unwrap();
        let l_shift = shifted.loss_value(shifted.params().values(), &paths).unwrap();
        assert!(l_plain > 0.0);
        assert!((l_shift - l_plain).abs() <= 1e-9 * l_plain, "{l_shift} vs {l_plain}");
    }

    #[test]
    fn zero_network_strategy_grid_values() {
        let p = straddle(0.03, 0.05, 0.05, 0.3, 10);
        let mut m = DeepBsdeModel::new(&p, &X0Sampler::Fixed(100.0), &config(SolverVariant::BackwardLearnedY0)).unwrap();
        for v in m.params_mut().values_mut() {
            *v = 0.0;
        }
        for step in [0, 5, 9] {
            assert_eq!(m.delta_at(step, &[123.0]).unwrap(), vec![0.0]);
        }
        assert!(m.delta_at(10, &[1.0]).is_err());
        assert_eq!(m.value_at(0, &[100.0]).unwrap(), Some(0.0));
        assert_eq!(m.value_at(3, &[100.0]).unwrap(), None);
    }

    #[test]
    fn shared_net_sees_time() {
        let p = straddle(0.03, 0.05, 0.05, 0.3, 10);
        let v = SolverVariant::BackwardBatchVariance {
            estimate: MeanEstimate::LastBatchMean,
        };
        let m = DeepBsdeModel::new(&p, &X0Sampler::Fixed(100.0), &config(v)).unwrap();
        assert!(matches!(m.strategy(), StrategyModel::SharedNet { .. }));
        let a = m.delta_at(0, &[100.0]).unwrap()[0];
        let b = m.delta_at(9, &[100.0]).unwrap()[0];
        assert_ne!(a, b);
    }
}
