//! Multi-seed runs, trajectory CSVs and the across-seed summary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{error, info};
use rayon::prelude::*;
use stable_bilevel::{
    load_libsvm, make_hyperopt_logistic, make_quadratic, split, stream, synthetic_logistic,
    BilevelOracle, BoxSet, Bsa, DeterministicChannels, DoubleWell, Error, Hyperopt, HyperoptSpec,
    InnerSteps, MetricRecorder, MoreauOptions, NeumannParams, NoiseLevels, Quadratic,
    QuadraticSpec, RandomQuadratic, RecordRow, Recorder, Result, RunRecord, ScheduleKind, Stable,
    StepsizeSchedule, Ttsa, TwoTimescaleSchedule, UpperReference,
};

use crate::config::{
    Algorithm, ExperimentConfig, HyperoptConfig, InnerStepsConfig, ProblemConfig, QuadraticConfig,
    ScheduleConfig,
};

pub const SUMMARY_FILE: &str = "summary.csv";

/// Metric columns shared by trajectory and summary files, in order.
pub const METRIC_COLUMNS: [&str; 5] = [
    "upper_error",
    "lower_error",
    "moreau_stationarity",
    "tracker_mse_xy",
    "tracker_mse_yy",
];

/// A problem instance built from its configuration.
#[derive(Debug, Clone)]
pub enum BuiltProblem {
    Quadratic(Quadratic),
    Hyperopt(Hyperopt),
}

pub fn build_problem(cfg: &ProblemConfig) -> Result<BuiltProblem> {
    match cfg {
        ProblemConfig::Quadratic(q) => build_quadratic(q).map(BuiltProblem::Quadratic),
        ProblemConfig::Hyperopt(h) => build_hyperopt(h).map(BuiltProblem::Hyperopt),
    }
}

fn build_quadratic(q: &QuadraticConfig) -> Result<Quadratic> {
    let knobs = RandomQuadratic {
        mu_g: q.mu_g,
        condition: q.condition,
        coupling: q.coupling,
        ridge: q.ridge,
    };
    let mut spec = QuadraticSpec::random(q.dim_x, q.dim_y, knobs, &mut stream(q.instance_seed))
        .with_noise(NoiseLevels::uniform(q.noise));
    if let (Some(lo), Some(hi)) = (q.box_lo, q.box_hi) {
        spec = spec.with_set(BoxSet::uniform(q.dim_x, lo, hi)?);
    }
    if let Some(w) = q.well {
        spec = spec.with_well(DoubleWell {
            curvature: w.curvature,
            quartic: w.quartic,
        });
    }
    make_quadratic(spec)
}

fn build_hyperopt(h: &HyperoptConfig) -> Result<Hyperopt> {
    let (train, val) = match (&h.train, &h.val, &h.synthetic) {
        (Some(train), Some(val), _) => {
            let (train, val) = (load_libsvm(train)?, load_libsvm(val)?);
            let dim = train.dim().max(val.dim());
            (train.with_dim(dim)?, val.with_dim(dim)?)
        }
        (Some(all), None, _) => split(&load_libsvm(all)?, h.val_fraction, h.split_seed)?,
        (None, _, Some(s)) => split(
            &synthetic_logistic(s.n, s.dim, s.seed)?,
            h.val_fraction,
            h.split_seed,
        )?,
        (None, _, None) => {
            return Err(Error::Configuration("hyperopt needs train data".into()));
        }
    };
    let mut spec = HyperoptSpec::new(train, val)?;
    spec.set = BoxSet::uniform(spec.set.dim(), h.box_lo, h.box_hi)?;
    spec.batch_upper = h.batch_upper;
    spec.batch_lower = h.batch_lower;
    make_hyperopt_logistic(spec)
}

/// Single-timescale schedule for `iterations` steps.
pub fn stable_schedule(cfg: &ScheduleConfig, iterations: usize) -> Result<StepsizeSchedule<f64>> {
    let kind = match *cfg {
        ScheduleConfig::Nonconvex {
            alpha_scale,
            beta_cap,
            alpha_ratio,
        } => ScheduleKind::Nonconvex {
            horizon: iterations,
            alpha_scale,
            beta_cap,
            alpha_ratio,
        },
        ScheduleConfig::StronglyConvex {
            k0,
            beta_cap,
            alpha_ratio,
        } => ScheduleKind::StronglyConvex {
            k0,
            beta_cap,
            alpha_ratio,
        },
        ScheduleConfig::Constant { alpha, beta, tau } => {
            ScheduleKind::Constant { alpha, beta, tau }
        }
        ScheduleConfig::TwoTimescale { .. } => {
            return Err(Error::Configuration(
                "two_timescale schedules only apply to ttsa and bsa".into(),
            ))
        }
    };
    StepsizeSchedule::new(kind)
}

fn two_timescale(cfg: &ScheduleConfig) -> Result<TwoTimescaleSchedule<f64>> {
    match *cfg {
        ScheduleConfig::TwoTimescale {
            alpha0,
            beta0,
            alpha_exponent,
            beta_exponent,
        } => TwoTimescaleSchedule::new(alpha0, beta0, alpha_exponent, beta_exponent),
        _ => Err(Error::Configuration(
            "ttsa and bsa need a two_timescale schedule".into(),
        )),
    }
}

enum Method<'p, P> {
    Stable(Stable<'p, f64, P>),
    Ttsa(Ttsa<'p, f64, P>),
    Bsa(Bsa<'p, f64, P>),
}

impl<'p, P> Method<'p, P>
where
    P: BilevelOracle<f64>,
{
    fn new(problem: &'p P, cfg: &ExperimentConfig) -> Result<Self> {
        let neumann = || -> Result<NeumannParams<f64>> {
            let n = &cfg.neumann;
            let scale = match n.scale {
                Some(s) => s,
                None => 1.0 / problem.constants()?.l_g,
            };
            NeumannParams::new(n.terms, scale, n.samples_per_term)
        };
        Ok(match cfg.algorithm.name {
            Algorithm::Stable => Method::Stable(Stable::new(
                problem,
                stable_schedule(&cfg.schedule, cfg.run.iterations)?,
            )?),
            Algorithm::Ttsa => Method::Ttsa(Ttsa::new(
                problem,
                two_timescale(&cfg.schedule)?,
                neumann()?,
            )?),
            Algorithm::Bsa => {
                let inner = match &cfg.bsa.inner_steps {
                    InnerStepsConfig::Count(n) => InnerSteps::Constant(*n),
                    InnerStepsConfig::Rule(_) => InnerSteps::Sqrt,
                };
                Method::Bsa(Bsa::new(
                    problem,
                    two_timescale(&cfg.schedule)?,
                    inner,
                    neumann()?,
                )?)
            }
        })
    }

    fn run<Rec: Recorder<f64>>(
        &self,
        iterations: usize,
        seed: u64,
        rec: &mut Rec,
    ) -> Result<RunRecord<f64>> {
        match self {
            Method::Stable(m) => m.run(iterations, seed, rec),
            Method::Ttsa(m) => m.run(iterations, seed, rec),
            Method::Bsa(m) => m.run(iterations, seed, rec),
        }
    }
}

/// Result of one seed.
#[derive(Debug)]
pub struct SeedOutcome {
    pub seed: u64,
    pub result: Result<RunRecord<f64>>,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub runs: Vec<SeedOutcome>,
    pub trajectory_files: Vec<PathBuf>,
    pub summary_file: PathBuf,
}

impl ExperimentOutcome {
    pub fn failures(&self) -> impl Iterator<Item = (u64, &Error)> {
        self.runs
            .iter()
            .filter_map(|r| r.result.as_ref().err().map(|e| (r.seed, e)))
    }
}

/// Runs every seed of `cfg` on `problem` without touching the filesystem.
pub fn run_seeds<P>(
    problem: &P,
    cfg: &ExperimentConfig,
    reference: &UpperReference<f64>,
) -> Result<Vec<SeedOutcome>>
where
    P: BilevelOracle<f64> + DeterministicChannels<f64>,
{
    cfg.validate()?;
    let method = Method::new(problem, cfg)?;
    let iterations = cfg.run.iterations;
    let cadence = cfg.cadence();
    let moreau = cfg.run.rho.map(|rho| MoreauOptions {
        tol: cfg.run.moreau_tol,
        solve_tol: cfg.run.solve_tol,
        ..MoreauOptions::new(rho)
    });
    Ok(cfg
        .run
        .seeds
        .par_iter()
        .map(|&seed| {
            let result = MetricRecorder::new(problem, cadence, iterations, reference.clone())
                .and_then(|rec| {
                    let mut rec = rec.with_solve_tol(cfg.run.solve_tol);
                    if let Some(opts) = moreau {
                        rec = rec.with_moreau(opts);
                    }
                    method.run(iterations, seed, &mut rec)
                });
            SeedOutcome { seed, result }
        })
        .collect())
}

/// `||x - x*||^2` when the instance has a closed-form solution, otherwise
/// `F(x) - F*` if `F*` is configured, otherwise `F(x)`.
pub fn upper_reference(problem: &BuiltProblem, cfg: &ExperimentConfig) -> UpperReference<f64> {
    if let BuiltProblem::Quadratic(q) = problem {
        if let Some(x_star) = q.solution() {
            return UpperReference::Solution(x_star.clone());
        }
    }
    match cfg.run.optimal_value {
        Some(f_star) => UpperReference::OptimalValue(f_star),
        None => UpperReference::Objective,
    }
}

/// Builds the problem, runs every seed (in parallel), and writes
/// `run_seed{seed}.csv` per successful seed plus `summary.csv` into `out_dir`.
/// A failed seed leaves `run_seed{seed}.error.txt` instead; the others still run.
pub fn run_experiment_in(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let problem = build_problem(&cfg.problem)?;
    let reference = upper_reference(&problem, cfg);
    let runs = match &problem {
        BuiltProblem::Quadratic(p) => run_seeds(p, cfg, &reference)?,
        BuiltProblem::Hyperopt(p) => run_seeds(p, cfg, &reference)?,
    };
    write_outputs(cfg, out_dir, runs)
}

/// `run_experiment_in` at the configured (or overridden) output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    run_experiment_in(cfg, &cfg.output_dir())
}

fn write_outputs(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    runs: Vec<SeedOutcome>,
) -> Result<ExperimentOutcome> {
    fs::create_dir_all(out_dir)?;
    let wallclock = cfg.run.record_wallclock;
    let mut trajectory_files = Vec::new();
    let mut ok = Vec::new();
    for run in &runs {
        match &run.result {
            Ok(record) => {
                let path = out_dir.join(format!("run_seed{}.csv", run.seed));
                write_trajectory(fs::File::create(&path)?, &record.rows, wallclock)?;
                info!(
                    "seed {}: {} rows -> {}",
                    run.seed,
                    record.rows.len(),
                    path.display()
                );
                trajectory_files.push(path);
                ok.push(record.rows.as_slice());
            }
            Err(e) => {
                error!("seed {} failed: {e}", run.seed);
                let path = out_dir.join(format!("run_seed{}.error.txt", run.seed));
                fs::write(path, format!("{e}\n"))?;
            }
        }
    }
    if ok.is_empty() {
        return Err(Error::Numerical("every seed failed".into()));
    }
    let summary_file = out_dir.join(SUMMARY_FILE);
    write_summary(fs::File::create(&summary_file)?, &ok, wallclock)?;
    Ok(ExperimentOutcome {
        runs,
        trajectory_files,
        summary_file,
    })
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Round-trippable float text.
fn fmt(v: f64) -> String {
    format!("{v:?}")
}

fn metric_values(row: &RecordRow) -> [f64; 5] {
    [
        row.upper_error,
        row.lower_error,
        row.moreau_stationarity,
        row.tracker_mse_xy,
        row.tracker_mse_yy,
    ]
}

/// Writes one run's rows. `wallclock` adds the elapsed-seconds column, which
/// makes the file differ between reruns.
pub fn write_trajectory<W: Write>(out: W, rows: &[RecordRow], wallclock: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["k", "samples_xi", "samples_phi", "samples_total"];
    if wallclock {
        header.push("wallclock");
    }
    header.extend(METRIC_COLUMNS);
    w.write_record(&header).map_err(csv_error)?;
    for row in rows {
        let mut rec = vec![
            row.k.to_string(),
            row.samples_xi.to_string(),
            row.samples_phi.to_string(),
            row.samples_total().to_string(),
        ];
        if wallclock {
            rec.push(fmt(row.wallclock));
        }
        rec.extend(metric_values(row).into_iter().map(fmt));
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and sample standard deviation (NaN below two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-`k` mean and standard deviation across runs. All runs must share the
/// same `k` grid.
pub fn write_summary<W: Write>(out: W, runs: &[&[RecordRow]], wallclock: bool) -> Result<()> {
    let first = runs
        .first()
        .ok_or_else(|| Error::Analysis("no runs to summarize".into()))?;
    for r in runs {
        if r.len() != first.len() || r.iter().zip(first.iter()).any(|(a, b)| a.k != b.k) {
            return Err(Error::Analysis(
                "runs were logged at different iterations".into(),
            ));
        }
    }
    let mut names: Vec<&str> = Vec::new();
    if wallclock {
        names.push("wallclock");
    }
    names.extend(METRIC_COLUMNS);

    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "k".to_string(),
        "runs".to_string(),
        "samples_xi_mean".to_string(),
        "samples_phi_mean".to_string(),
        "samples_total_mean".to_string(),
    ];
    for name in &names {
        header.push(format!("{name}_mean"));
        header.push(format!("{name}_std"));
    }
    w.write_record(&header).map_err(csv_error)?;

    for (i, row) in first.iter().enumerate() {
        let column =
            |f: &dyn Fn(&RecordRow) -> f64| -> Vec<f64> { runs.iter().map(|r| f(&r[i])).collect() };
        let mut rec = vec![row.k.to_string(), runs.len().to_string()];
        for f in [
            &(|r: &RecordRow| r.samples_xi as f64) as &dyn Fn(&RecordRow) -> f64,
            &|r: &RecordRow| r.samples_phi as f64,
            &|r: &RecordRow| r.samples_total() as f64,
        ] {
            rec.push(fmt(mean_std(&column(f)).0));
        }
        if wallclock {
            let (m, s) = mean_std(&column(&|r: &RecordRow| r.wallclock));
            rec.push(fmt(m));
            rec.push(fmt(s));
        }
        for j in 0..METRIC_COLUMNS.len() {
            let (m, s) = mean_std(&column(&|r: &RecordRow| metric_values(r)[j]));
            rec.push(fmt(m));
            rec.push(fmt(s));
        }
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}
