use std::path::{Path, PathBuf};
use std::time::Instant;

use super::csv::{fmt_float, write_csv};
use super::{ExperimentConfig, ExperimentError, Position};
use crate::market::{mix_seed, simulate_path_batch, BackstepMethod, FbsdeProblem, X0Sampler};
use crate::pde::{reference_grid, solve_hjb_1d, Direction, HjbProblem, ValueSurface};
use crate::solver::{train, SolverConfig, SolverError, TrainOutcome, TrainReport};

pub const LOSS_HEADER: [&str; 2] = ["batch", "loss"];
pub const Y0_HEADER: [&str; 2] = ["batch", "y0"];
pub const STRATEGY_HEADER: [&str; 7] = ["t", "x", "delta", "pi_value", "cash", "borrow_flag", "extrapolation_flag"];
pub const YINIT_HEADER: [&str; 3] = ["x0", "yinit", "rollback_mean"];
pub const SUMMARY_HEADER: [&str; 6] = ["method", "backstep", "price", "range_min", "range_max", "wall_time"];

/// Paths per grid point when a value has to be estimated by rollback.
const GRID_PATHS: usize = 256;
const CURVE_PATHS: usize = 1024;
const GRID_TIMES: usize = 11;
const GRID_SPOTS: usize = 41;

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub backstep: String,
    pub price: f64,
    pub range_min: f64,
    pub range_max: f64,
    pub wall_time: f64,
}

impl SummaryRow {
    fn cells(&self) -> Vec<String> {
        vec![
            self.method.clone(),
            self.backstep.clone(),
            fmt_float(self.price),
            fmt_float(self.range_min),
            fmt_float(self.range_max),
            fmt_float(self.wall_time),
        ]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub summary: Vec<SummaryRow>,
    /// Labels of runs that diverged (their partial artifacts are written).
    pub diverged: Vec<String>,
}

fn backstep_name(b: BackstepMethod) -> &'static str {
    match b {
        BackstepMethod::Exact => "exact",
        BackstepMethod::Taylor => "taylor",
    }
}

fn run_label(solver: &SolverConfig, position: Position) -> String {
    format!("{}_{}", solver.label(), position.name())
}

fn write_histories(dir: &Path, report: &TrainReport, sign: f64) -> std::io::Result<()> {
    write_csv(
        &dir.join("loss_curve.csv"),
        &LOSS_HEADER,
        report
            .loss_history
            .iter()
            .enumerate()
            .map(|(i, l)| vec![i.to_string(), fmt_float(*l)]),
    )?;
    write_csv(
        &dir.join("y0_history.csv"),
        &Y0_HEADER,
        report
            .y0_history
            .iter()
            .enumerate()
            .map(|(i, v)| vec![i.to_string(), fmt_float(sign * v)]),
    )
}

/// Evaluates the trained strategy on a `(t, x)` grid.
///
/// `Y` comes from a learned value readout at that time when one exists and
/// from a rollback with the frozen strategy otherwise. Spots outside the
/// range reached by reference paths at that time are flagged.
pub fn write_strategy_grid(path: &Path, outcome: &TrainOutcome<f64>, seed: u64) -> Result<(), ExperimentError> {
    let model = &outcome.model;
    let problem = model.problem();
    let n = problem.grid.n_steps;
    let dim = problem.model.dim;
    let reference = simulate_path_batch(
        &problem.model,
        &problem.grid,
        model.sampler(),
        CURVE_PATHS,
        mix_seed(seed, u64::MAX),
    )?;
    let support: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let x = reference.x_at(i);
            x.as_slice()
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
        })
        .collect();
    let last = reference.x_at(n - 1);
    let lo = last.as_slice().iter().copied().fold(f64::INFINITY, f64::min).min(support[0].0);
    let hi = last.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max).max(support[0].1);

    let mut steps: Vec<usize> = (0..GRID_TIMES).map(|k| k * (n - 1) / (GRID_TIMES - 1)).collect();
    steps.dedup();
    let mut rows = Vec::new();
    for &step in &steps {
        let t = problem.grid.time(step);
        for k in 0..GRID_SPOTS {
            let x = lo + (hi - lo) * k as f64 / (GRID_SPOTS - 1) as f64;
            let state = vec![x; dim];
            let pi_sum: f64 = model.delta_at(step, &state)?.iter().map(|d| d * x).sum();
            let y = match model.value_at(step, &state)? {
                Some(v) => v,
                None => model.rollback_mean_from(step, x, GRID_PATHS, mix_seed(seed, (step * GRID_SPOTS + k) as u64))?.0,
            };
            let (s_lo, s_hi) = support[step];
            let outside = x < s_lo || x > s_hi;
            rows.push(vec![
                fmt_float(t),
                fmt_float(x),
                fmt_float(pi_sum / (x * dim as f64)),
                fmt_float(pi_sum),
                fmt_float(y - pi_sum),
                u8::from(pi_sum > y).to_string(),
                u8::from(outside).to_string(),
            ]);
        }
    }
    write_csv(path, &STRATEGY_HEADER, rows)?;
    Ok(())
}

/// Learned initial value against a rollback mean over the sampled range of
/// initial spots, with a JSON sidecar marking the plot window.
pub fn write_yinit_curve(
    dir: &Path,
    outcome: &TrainOutcome<f64>,
    sign: f64,
    plot_window: Option<[f64; 2]>,
    seed: u64,
) -> Result<(), ExperimentError> {
    let model = &outcome.model;
    let (lo, hi) = match *model.sampler() {
        X0Sampler::Uniform { lo, hi } => (lo, hi),
        X0Sampler::Fixed(x) => (x, x),
    };
    let dim = model.problem().model.dim;
    let points = if lo == hi { 1 } else { GRID_SPOTS };
    let mut rows = Vec::new();
    for k in 0..points {
        let x = if points == 1 {
            lo
        } else {
            lo + (hi - lo) * k as f64 / (points - 1) as f64
        };
        let learned = model.learned_y0(&vec![x; dim])?.unwrap_or(f64::NAN);
        let (mean, _) = model.rollback_mean_from(0, x, CURVE_PATHS, mix_seed(seed, k as u64))?;
        rows.push(vec![fmt_float(x), fmt_float(sign * learned), fmt_float(sign * mean)]);
    }
    write_csv(&dir.join("yinit_curve.csv"), &YINIT_HEADER, rows)?;
    let meta = serde_json::json!({
        "sampled_range": [lo, hi],
        "plot_window": plot_window,
        "position": if sign > 0.0 { "long" } else { "short" },
    });
    std::fs::write(
        dir.join("yinit_curve.json"),
        serde_json::to_string_pretty(&meta).expect("json") + "\n",
    )?;
    Ok(())
}

/// PDE reference price of a position at `x0` on the baseline grid.
pub fn pde_price(
    problem: &FbsdeProblem<f64>,
    position: Position,
    x0: f64,
    sampled_top: f64,
    fixed_spot: Option<f64>,
    n_nodes: usize,
    time_steps: usize,
) -> Result<ValueSurface<f64>, ExperimentError> {
    let grid = reference_grid(&problem.payoff, &[sampled_top, x0], fixed_spot, n_nodes, time_steps)?;
    let hjb = HjbProblem {
        sigma_ln: problem.model.sigma_ln,
        r_l: problem.rates.r_l,
        r_b: problem.rates.r_b,
        payoff: problem.payoff.clone(),
        maturity: problem.grid.horizon(),
        direction: match position {
            Position::Long => Direction::Upper,
            Position::Short => Direction::Lower,
        },
    };
    Ok(solve_hjb_1d(&hjb, &grid)?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleRow {
    pub x0: f64,
    pub upper: f64,
    pub lower: f64,
}

/// PDE upper and lower prices at the fixed spot, or at nine points across
/// the sampled range.
pub fn oracle_table(config: &ExperimentConfig) -> Result<Vec<OracleRow>, ExperimentError> {
    let problem = config.problem()?;
    if problem.model.dim != 1 {
        return Err(ExperimentError::Config("the PDE oracle covers one asset only".into()));
    }
    let sampler = config.x0.sampler();
    let (points, top, fixed) = match sampler {
        X0Sampler::Fixed(x) => (vec![x], x, Some(x)),
        X0Sampler::Uniform { lo, hi } => ((0..9).map(|k| lo + (hi - lo) * k as f64 / 8.0).collect(), hi, None),
    };
    let upper = pde_price(&problem, Position::Long, points[0], top, fixed, 101, 100)?;
    let lower = pde_price(&problem, Position::Short, points[0], top, fixed, 101, 100)?;
    points
        .into_iter()
        .map(|x0| {
            Ok(OracleRow {
                x0,
                upper: upper.sample(x0)?,
                lower: lower.sample(x0)?,
            })
        })
        .collect()
}

/// Trains every `(solver, position)` pair and writes all artifacts under
/// `config.out_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunArtifacts, ExperimentError> {
    config.validate()?;
    let out = &config.out_dir;
    std::fs::create_dir_all(out)?;
    std::fs::write(
        out.join("config.json"),
        serde_json::to_string_pretty(config).expect("config serializes") + "\n",
    )?;
    let long = config.problem()?;
    let sampler = config.x0.sampler();
    let mut artifacts = RunArtifacts {
        out_dir: out.clone(),
        ..Default::default()
    };

    for solver in &config.solvers {
        for &position in &config.positions {
            let label = run_label(solver, position);
            let dir = out.join(&label);
            std::fs::create_dir_all(&dir)?;
            let problem = match position {
                Position::Long => long.clone(),
                Position::Short => long.negated(),
            };
            let sign = position.sign();
            let outcome = match train(&problem, &sampler, solver) {
                Ok(o) => o,
                Err(SolverError::Diverged { batch, reason, report }) => {
                    write_histories(&dir, &report, sign)?;
                    std::fs::write(dir.join("diverged.txt"), format!("batch {batch}: {reason}\n"))?;
                    artifacts.summary.push(SummaryRow {
                        method: format!("{}_{}", solver.variant.label(), position.name()),
                        backstep: backstep_name(solver.backstep).into(),
                        price: f64::NAN,
                        range_min: f64::NAN,
                        range_max: f64::NAN,
                        wall_time: report.wall_time,
                    });
                    artifacts.diverged.push(label);
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let report = &outcome.report;
            write_histories(&dir, report, sign)?;
            write_strategy_grid(&dir.join("strategy_grid.csv"), &outcome, solver.seed)?;
            if !sampler.is_fixed() {
                write_yinit_curve(&dir, &outcome, sign, config.plot_window, solver.seed)?;
            }
            let price = if report.y0_history.is_empty() {
                f64::NAN
            } else {
                sign * outcome.estimate_price()?
            };
            let (a, b) = (sign * report.y0_range.0, sign * report.y0_range.1);
            artifacts.summary.push(SummaryRow {
                method: format!("{}_{}", solver.variant.label(), position.name()),
                backstep: backstep_name(solver.backstep).into(),
                price,
                range_min: a.min(b),
                range_max: a.max(b),
                wall_time: report.wall_time,
            });
        }
    }

    if config.oracle && long.model.dim == 1 {
        let (top, fixed) = match sampler {
            X0Sampler::Fixed(x) => (x, Some(x)),
            X0Sampler::Uniform { hi, .. } => (hi, None),
        };
        let x0 = sampler.center();
        for &position in &config.positions {
            let started = Instant::now();
            let surface = pde_price(&long, position, x0, top, fixed, 101, 100)?;
            let price = surface.sample(x0)?;
            artifacts.summary.push(SummaryRow {
                method: format!("pde_oracle_{}", position.name()),
                backstep: "implicit".into(),
                price,
                range_min: price,
                range_max: price,
                wall_time: started.elapsed().as_secs_f64(),
            });
        }
    }

    write_csv(
        &out.join("summary.csv"),
        &SUMMARY_HEADER,
        artifacts.summary.iter().map(SummaryRow::cells),
    )?;
    if let Some(first) = artifacts.diverged.first() {
        return Err(ExperimentError::Numerical(format!(
            "training diverged in {} run(s), first `{first}`; partial artifacts written",
            artifacts.diverged.len()
        )));
    }
    Ok(artifacts)
}
