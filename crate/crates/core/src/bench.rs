//! Experiment drivers behind the `stackgrad` binary.
//!
//! Each command returns typed results (used directly by tests) and can turn
//! them into [`BenchRecord`]s for CSV output. Every record carries the
//! parameters needed to replay it.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::adversarial::{
    load_wine_csv, nash_train, prepare_split, run_regression_experiment, synth_dataset, wine_like_dataset, DataError,
    Dataset, ExperimentOptions, ExperimentResult,
};
use crate::game::{flatten_rows, quadratic_game, quartic_game, regression_game, RegressionGameSpec};
use crate::solver::{
    backward_hypergradient, fd_hypergradient, forward_hypergradient, solve_stackelberg, HessianPoint, Method,
    SolverConfig, SolverError,
};
use crate::DifferentiableGame;

/// Equilibrium of the quadratic game in every coordinate.
pub const QUADRATIC_EQUILIBRIUM: f64 = -3.5;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("writing {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}

impl From<crate::game::GameError> for BenchError {
    fn from(e: crate::game::GameError) -> Self {
        BenchError::Solver(e.into())
    }
}

/// One output row: named parameters and metrics plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub experiment: String,
    pub parameters: Vec<(String, String)>,
    pub metrics: Vec<(String, String)>,
    pub seed: Option<u64>,
    pub timestamp: u64,
}

impl BenchRecord {
    fn new(experiment: &str, seed: Option<u64>) -> Self {
        BenchRecord {
            experiment: experiment.to_string(),
            parameters: Vec::new(),
            metrics: Vec::new(),
            seed,
            timestamp: unix_seconds(),
        }
    }

    fn param(mut self, key: &str, value: impl ToString) -> Self {
        self.parameters.push((key.to_string(), value.to_string()));
        self
    }

    fn metric(mut self, key: &str, value: impl ToString) -> Self {
        self.metrics.push((key.to_string(), value.to_string()));
        self
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["experiment".to_string()];
        h.extend(self.parameters.iter().map(|(k, _)| k.clone()));
        h.extend(self.metrics.iter().map(|(k, _)| k.clone()));
        h.push("seed".to_string());
        h.push("timestamp".to_string());
        h
    }

    pub fn row(&self) -> Vec<String> {
        let mut r = vec![self.experiment.clone()];
        r.extend(self.parameters.iter().map(|(_, v)| v.clone()));
        r.extend(self.metrics.iter().map(|(_, v)| v.clone()));
        r.push(self.seed.map(|s| s.to_string()).unwrap_or_default());
        r.push(self.timestamp.to_string());
        r
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.parameters
            .iter()
            .chain(&self.metrics)
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

/// Shortest round-trip form, with exponents for very small or large values.
fn num(v: f64) -> String {
    format!("{v:?}")
}

fn unix_seconds() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Writes records sharing one schema as CSV with a header row.
pub fn write_records<W: Write>(out: W, records: &[BenchRecord]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    if let Some(first) = records.first() {
        let header = first.header();
        w.write_record(&header)?;
        for r in records {
            if r.header() != header {
                return Err(BenchError::Input(format!(
                    "record for `{}` does not match the CSV schema",
                    r.experiment
                )));
            }
            w.write_record(r.row())?;
        }
    }
    w.flush().map_err(|source| BenchError::Io {
        path: "<csv>".into(),
        source,
    })?;
    Ok(())
}

/// Writes to `path`, or stdout when `None`.
pub fn write_output(
    path: Option<&Path>,
    write: impl FnOnce(&mut dyn Write) -> Result<(), BenchError>,
) -> Result<(), BenchError> {
    match path {
        Some(p) => {
            let io = |source| BenchError::Io {
                path: p.display().to_string(),
                source,
            };
            let file = std::fs::File::create(p).map_err(io)?;
            let mut buf = std::io::BufWriter::new(file);
            write(&mut buf)?;
            buf.flush().map_err(io)
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)
        }
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

fn max_abs_error(v: &[f64], target: f64) -> f64 {
    v.iter().map(|x| (x - target).abs()).fold(0.0, f64::max)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `|a - b| / |b|`, falling back to the absolute gap when `b` is ~0.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(b);
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

fn standard_normal_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

// ---------------------------------------------------------------------------
// quadratic

#[derive(Debug, Clone)]
pub struct QuadraticOptions {
    pub dims: Vec<usize>,
    pub methods: Vec<Method>,
    pub solver: SolverConfig,
    pub repeats: usize,
    pub seed: u64,
}

pub fn default_dims() -> Vec<usize> {
    vec![2, 4, 8, 16, 32, 64]
}

impl Default for QuadraticOptions {
    fn default() -> Self {
        QuadraticOptions {
            dims: default_dims(),
            methods: vec![Method::Backward, Method::Forward],
            solver: SolverConfig::default(),
            repeats: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticResult {
    pub dim: usize,
    pub method: Method,
    pub median_seconds: f64,
    pub alpha_max_abs_error: f64,
    pub beta_max_abs_error: f64,
    pub trace_length: usize,
    pub error: Option<String>,
}

/// Times `solve_stackelberg` on the quadratic game for each dimension and
/// method. Runs are sequential so timings do not interfere.
pub fn cmd_quadratic(opts: &QuadraticOptions) -> Result<Vec<QuadraticResult>, BenchError> {
    if opts.dims.is_empty() || opts.dims.contains(&0) {
        return Err(BenchError::Input(
            "dims must be a nonempty list of positive sizes".into(),
        ));
    }
    if opts.repeats == 0 || opts.methods.is_empty() {
        return Err(BenchError::Input("need at least one repeat and one method".into()));
    }
    opts.solver.validate()?;
    let mut out = Vec::new();
    for &dim in &opts.dims {
        let game = quadratic_game(dim)?;
        for &method in &opts.methods {
            let config = SolverConfig {
                method,
                ..opts.solver.clone()
            };
            let mut times = Vec::with_capacity(opts.repeats);
            let mut last = None;
            for _ in 0..opts.repeats {
                let start = Instant::now();
                let report = solve_stackelberg(&game, &config)?;
                times.push(start.elapsed().as_secs_f64());
                last = Some(report);
            }
            let report = last.expect("at least one repeat");
            out.push(QuadraticResult {
                dim,
                method,
                median_seconds: median(&mut times),
                alpha_max_abs_error: max_abs_error(&report.final_alpha, QUADRATIC_EQUILIBRIUM),
                beta_max_abs_error: max_abs_error(&report.final_beta, QUADRATIC_EQUILIBRIUM),
                trace_length: report.peak_trace_length,
                error: report.failure.map(|e| e.to_string()),
            });
        }
    }
    Ok(out)
}

pub fn quadratic_records(results: &[QuadraticResult], opts: &QuadraticOptions) -> Vec<BenchRecord> {
    results
        .iter()
        .map(|r| {
            BenchRecord::new("quadratic", Some(opts.seed))
                .param("dim", r.dim)
                .param("method", r.method)
                .param("inner_steps", opts.solver.inner_steps)
                .param("inner_eta", num(opts.solver.inner_eta))
                .param("outer_steps", opts.solver.outer_steps)
                .param("outer_eta", num(opts.solver.outer_eta))
                .param("repeats", opts.repeats)
                .metric("median_seconds", num(r.median_seconds))
                .metric("alpha_max_abs_error", num(r.alpha_max_abs_error))
                .metric("beta_max_abs_error", num(r.beta_max_abs_error))
                .metric("trace_length", r.trace_length)
                .metric("error", r.error.as_deref().unwrap_or(""))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// regression

/// Where regression data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// UCI white-wine CSV, optionally subsampled to `subsample` rows per seed.
    Wine { path: PathBuf, subsample: Option<usize> },
    /// Offline wine-like substitute with `rows` rows, drawn per seed.
    Synthetic { rows: usize },
}

impl DataSource {
    pub fn describe(&self) -> String {
        match self {
            DataSource::Wine { path, subsample } => match subsample {
                Some(k) => format!("{}@{k}", path.display()),
                None => path.display().to_string(),
            },
            DataSource::Synthetic { rows } => format!("synthetic@{rows}"),
        }
    }

    /// Loads the wine file once; synthetic data is generated on demand.
    pub fn load(&self) -> Result<Option<Dataset>, BenchError> {
        match self {
            DataSource::Wine { path, .. } => {
                let parsed = load_wine_csv(path)?;
                if parsed.malformed_rows > 0 {
                    eprintln!("skipped {} malformed rows in {}", parsed.malformed_rows, path.display());
                }
                Ok(Some(parsed.dataset))
            }
            DataSource::Synthetic { .. } => Ok(None),
        }
    }

    /// The dataset used for `seed`, given the result of [`DataSource::load`].
    pub fn for_seed(&self, loaded: Option<&Dataset>, seed: u64) -> Result<Dataset, BenchError> {
        match (self, loaded) {
            (DataSource::Wine { subsample, .. }, Some(data)) => Ok(match subsample {
                Some(k) if *k < data.k() => data.subsample(*k, seed),
                _ => data.clone(),
            }),
            (DataSource::Synthetic { rows }, _) => Ok(wine_like_dataset(seed, *rows)?.dataset),
            (DataSource::Wine { .. }, None) => Err(BenchError::Input("wine data was not loaded".into())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegressionOptions {
    pub source: DataSource,
    pub seeds: Vec<u64>,
    pub experiment: ExperimentOptions,
}

/// Per-seed results followed by the mean over seeds for each `c_d`.
#[derive(Debug, Clone)]
pub struct RegressionSummary {
    pub per_seed: Vec<ExperimentResult>,
    /// `(c_d, mean rmse_raw, mean rmse_nash, mean seconds per outer epoch)`
    pub means: Vec<(f64, f64, f64, f64)>,
}

impl RegressionSummary {
    /// Results of one seed, in grid order.
    pub fn seed(&self, seed: u64) -> Vec<&ExperimentResult> {
        self.per_seed.iter().filter(|r| r.seed == seed).collect()
    }
}

pub fn cmd_regression(opts: &RegressionOptions) -> Result<RegressionSummary, BenchError> {
    if opts.seeds.is_empty() {
        return Err(BenchError::Input("need at least one seed".into()));
    }
    if opts.experiment.c_d_grid.is_empty() || opts.experiment.c_d_grid.iter().any(|c| !(*c >= 0.0)) {
        return Err(BenchError::Input("c_d grid must be nonempty and nonnegative".into()));
    }
    opts.experiment.solver.validate()?;
    let loaded = opts.source.load()?;
    let mut per_seed = Vec::new();
    for &seed in &opts.seeds {
        let data = opts.source.for_seed(loaded.as_ref(), seed)?;
        per_seed.extend(run_regression_experiment(&data, seed, &opts.experiment)?);
    }
    let means = opts
        .experiment
        .c_d_grid
        .iter()
        .map(|&c_d| {
            let rows: Vec<_> = per_seed.iter().filter(|r| r.c_d == c_d).collect();
            let n = rows.len() as f64;
            let mean = |f: fn(&ExperimentResult) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
            (
                c_d,
                mean(|r| r.rmse_raw),
                mean(|r| r.rmse_nash),
                mean(|r| r.seconds_per_outer_epoch),
            )
        })
        .collect();
    Ok(RegressionSummary { per_seed, means })
}

fn regression_record(experiment: &str, opts: &RegressionOptions, seed: Option<u64>) -> BenchRecord {
    let s = &opts.experiment.solver;
    BenchRecord::new(experiment, seed)
        .param("data", opts.source.describe())
        .param("method", s.method)
        .param("inner_steps", s.inner_steps)
        .param("inner_eta", num(s.inner_eta))
        .param("outer_steps", s.outer_steps)
        .param("c_l", num(opts.experiment.c_l))
        .param(
            "components",
            opts.experiment
                .components
                .map(|c| c.to_string())
                .unwrap_or_else(|| "all".into()),
        )
}

pub fn regression_records(summary: &RegressionSummary, opts: &RegressionOptions) -> Vec<BenchRecord> {
    let mut out: Vec<BenchRecord> = summary
        .per_seed
        .iter()
        .map(|r| {
            regression_record("regression", opts, Some(r.seed))
                .param("c_d", num(r.c_d))
                .param("outer_eta", num(r.outer_eta))
                .param("rho", num(r.rho))
                .param("k_train", r.k_train)
                .param("k_test", r.k_test)
                .metric("rmse_raw", num(r.rmse_raw))
                .metric("rmse_nash", num(r.rmse_nash))
                .metric("seconds_per_outer_epoch", num(r.seconds_per_outer_epoch))
        })
        .collect();
    for &(c_d, raw, nash, secs) in &summary.means {
        out.push(
            regression_record("regression-mean", opts, None)
                .param("c_d", num(c_d))
                .param("outer_eta", "")
                .param("rho", "")
                .param("k_train", "")
                .param("k_test", "")
                .metric("rmse_raw", num(raw))
                .metric("rmse_nash", num(nash))
                .metric("seconds_per_outer_epoch", num(secs)),
        );
    }
    out
}

// ---------------------------------------------------------------------------
// convergence

#[derive(Debug, Clone)]
pub struct ConvergenceOptions {
    pub source: DataSource,
    pub num_inits: usize,
    pub c_d: f64,
    pub seed: u64,
    pub experiment: ExperimentOptions,
}

#[derive(Debug, Clone)]
pub struct ConvergenceResult {
    /// Leader cost per outer epoch, one path per initialization.
    pub paths: Vec<Vec<f64>>,
    pub failures: Vec<Option<String>>,
    pub rho: f64,
    pub outer_eta: f64,
    pub k_train: usize,
}

impl ConvergenceResult {
    /// Lowest cost over all paths at their last epoch.
    pub fn best_final(&self) -> f64 {
        self.paths
            .iter()
            .filter_map(|p| p.last().copied())
            .fold(f64::INFINITY, f64::min)
    }

    /// `(max - min) / |min|` of the final costs.
    pub fn final_spread(&self) -> f64 {
        let finals: Vec<f64> = self.paths.iter().filter_map(|p| p.last().copied()).collect();
        let lo = finals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = finals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (hi - lo) / lo.abs().max(f64::MIN_POSITIVE)
    }
}

/// Leader-cost path and, for a diverged run, its error.
type PathRun = (Vec<f64>, Option<String>);

/// Runs the regression game from `num_inits` standard-normal leader
/// initializations on the training split of one seeded dataset.
pub fn cmd_convergence(opts: &ConvergenceOptions) -> Result<ConvergenceResult, BenchError> {
    if opts.num_inits == 0 {
        return Err(BenchError::Input("num_inits must be >= 1".into()));
    }
    opts.experiment.solver.validate()?;
    let loaded = opts.source.load()?;
    let data = opts.source.for_seed(loaded.as_ref(), opts.seed)?;
    let prepared = prepare_split(&data, opts.seed, &opts.experiment)?;
    let rho = prepared.selection.best_rho;
    let p = prepared.train.p();
    let solver = opts.experiment.solver_for(&prepared.train, rho);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let inits: Vec<Vec<f64>> = (0..opts.num_inits).map(|_| standard_normal_vec(&mut rng, p)).collect();
    let runs: Vec<Result<PathRun, BenchError>> = inits
        .into_par_iter()
        .map(|alpha0| {
            let config = SolverConfig {
                alpha0: Some(alpha0),
                ..solver.clone()
            };
            let fit = match nash_train(&prepared.train, opts.c_d, &config, rho, opts.experiment.c_l) {
                Ok(fit) => fit,
                Err(DataError::Solver(e @ SolverError::Divergence { .. })) => {
                    return Ok((Vec::new(), Some(e.to_string())))
                }
                Err(e) => return Err(e.into()),
            };
            Ok((fit.report.leader_objective_path, None))
        })
        .collect();
    let mut paths = Vec::with_capacity(runs.len());
    let mut failures = Vec::with_capacity(runs.len());
    for run in runs {
        let (path, failure) = run?;
        paths.push(path);
        failures.push(failure);
    }
    Ok(ConvergenceResult {
        paths,
        failures,
        rho,
        outer_eta: solver.outer_eta,
        k_train: prepared.train.k(),
    })
}

/// Wide CSV: `epoch, init_00, init_01, ...`; diverged paths leave blanks.
pub fn write_convergence<W: Write>(out: W, result: &ConvergenceResult) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    let width = result.paths.len().to_string().len().max(2);
    let mut header = vec!["epoch".to_string()];
    header.extend((0..result.paths.len()).map(|i| format!("init_{i:0width$}")));
    w.write_record(&header)?;
    let rows = result.paths.iter().map(Vec::len).max().unwrap_or(0);
    for epoch in 0..rows {
        let mut row = vec![epoch.to_string()];
        row.extend(
            result
                .paths
                .iter()
                .map(|p| p.get(epoch).map(|v| num(*v)).unwrap_or_default()),
        );
        w.write_record(&row)?;
    }
    w.flush().map_err(|source| BenchError::Io {
        path: "<csv>".into(),
        source,
    })?;
    Ok(())
}

// ---------------------------------------------------------------------------
// gradcheck

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GameKind {
    Quadratic,
    Quartic,
    Regression,
}

impl std::str::FromStr for GameKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "quadratic" => Ok(GameKind::Quadratic),
            "quartic" => Ok(GameKind::Quartic),
            "regression" => Ok(GameKind::Regression),
            other => Err(format!(
                "unknown game `{other}` (expected quadratic, quartic or regression)"
            )),
        }
    }
}

impl std::fmt::Display for GameKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GameKind::Quadratic => "quadratic",
            GameKind::Quartic => "quartic",
            GameKind::Regression => "regression",
        })
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub game: GameKind,
    /// Leader dimensions for the synthetic games; ignored for regression.
    pub dims: Vec<usize>,
    /// Rows and features of the regression instance.
    pub rows: usize,
    pub features: usize,
    pub c_d: f64,
    pub ridge: f64,
    pub inner_steps: usize,
    pub inner_eta: f64,
    pub fd_step: f64,
    pub fd_tol: f64,
    pub adjoint_tol: f64,
    /// Number of times `eta` is halved (with `T` doubled) for the gap check.
    pub halvings: usize,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            game: GameKind::Quadratic,
            dims: vec![1, 3, 5],
            rows: 20,
            features: 2,
            c_d: 1.0,
            ridge: 0.1,
            inner_steps: 40,
            inner_eta: 0.1,
            fd_step: f64::EPSILON.cbrt(),
            fd_tol: 1e-5,
            adjoint_tol: 1e-9,
            halvings: 2,
            seed: 0,
        }
    }
}

/// Which comparison a gradcheck row reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    /// Forward sensitivities vs. central differences.
    FdVsForward,
    /// Backward with current-iterate Hessians vs. forward.
    BackwardVsForward,
    /// Default backward vs. forward at one `(T, eta)` of the halving ladder.
    StepGap,
    /// Whether the step gaps shrink along the ladder.
    GapShrinks,
}

impl std::fmt::Display for CheckKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CheckKind::FdVsForward => "fd-vs-forward",
            CheckKind::BackwardVsForward => "backward-vs-forward",
            CheckKind::StepGap => "step-gap",
            CheckKind::GapShrinks => "gap-shrinks",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckRow {
    pub game: String,
    pub dim: usize,
    pub check: CheckKind,
    pub inner_steps: usize,
    pub inner_eta: f64,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Gaps this small count as exact agreement; there is nothing left to shrink.
const GAP_FLOOR: f64 = 1e-12;

/// Game, leader point and follower start.
type Instance = (DifferentiableGame, Vec<f64>, Option<Vec<f64>>);

fn gradcheck_instance(opts: &GradcheckOptions, dim: usize) -> Result<Instance, BenchError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(dim as u64));
    match opts.game {
        GameKind::Quadratic => Ok((quadratic_game(dim)?, standard_normal_vec(&mut rng, dim), None)),
        GameKind::Quartic => Ok((quartic_game(dim)?, standard_normal_vec(&mut rng, dim), None)),
        GameKind::Regression => {
            let data = synth_dataset(opts.seed, opts.rows, opts.features, 0.5)?.dataset;
            let spec = RegressionGameSpec::new(data.x.clone(), data.y.clone(), opts.c_d, opts.ridge);
            let alpha = standard_normal_vec(&mut rng, opts.features);
            Ok((regression_game(&spec)?, alpha, Some(flatten_rows(&data.x))))
        }
    }
}

/// Compares backward, forward and finite-difference hypergradients at a
/// random leader point for each requested size.
pub fn cmd_gradcheck(opts: &GradcheckOptions) -> Result<Vec<GradcheckRow>, BenchError> {
    if !(opts.fd_step > 0.0) || !(opts.fd_tol > 0.0) || !(opts.adjoint_tol > 0.0) {
        return Err(BenchError::Input("step and tolerances must be positive".into()));
    }
    let dims = match opts.game {
        GameKind::Regression => vec![opts.features],
        _ => opts.dims.clone(),
    };
    if dims.is_empty() || dims.contains(&0) {
        return Err(BenchError::Input(
            "dims must be a nonempty list of positive sizes".into(),
        ));
    }
    let mut rows = Vec::new();
    for dim in dims {
        let (game, alpha, beta0) = gradcheck_instance(opts, dim)?;
        let base = SolverConfig {
            inner_steps: opts.inner_steps,
            inner_eta: opts.inner_eta,
            beta0,
            ..SolverConfig::default()
        };
        base.validate()?;
        let row = |check, config: &SolverConfig, value: f64, tolerance: f64, passed: bool| GradcheckRow {
            game: game.name().to_string(),
            dim,
            check,
            inner_steps: config.inner_steps,
            inner_eta: config.inner_eta,
            value,
            tolerance,
            passed,
        };

        let forward = forward_hypergradient(&game, &alpha, &base)?.grad;
        let fd = fd_hypergradient(&game, &alpha, &base, opts.fd_step)?;
        let e = relative_error(&forward, &fd);
        rows.push(row(CheckKind::FdVsForward, &base, e, opts.fd_tol, e <= opts.fd_tol));

        let current = SolverConfig {
            hessian_point: HessianPoint::CurrentIterate,
            ..base.clone()
        };
        let exact = backward_hypergradient(&game, &alpha, &current)?.grad;
        let e = relative_error(&exact, &forward);
        rows.push(row(
            CheckKind::BackwardVsForward,
            &base,
            e,
            opts.adjoint_tol,
            e <= opts.adjoint_tol,
        ));

        let mut gaps = Vec::new();
        for h in 0..=opts.halvings {
            let config = SolverConfig {
                inner_steps: base.inner_steps << h,
                inner_eta: base.inner_eta / f64::from(1u32 << h),
                ..base.clone()
            };
            let fwd = forward_hypergradient(&game, &alpha, &config)?.grad;
            let bwd = backward_hypergradient(&game, &alpha, &config)?.grad;
            let gap = relative_error(&bwd, &fwd);
            rows.push(row(CheckKind::StepGap, &config, gap, f64::NAN, true));
            gaps.push(gap);
        }
        let exact_everywhere = gaps.iter().all(|g| *g <= GAP_FLOOR);
        let shrinking = gaps.windows(2).all(|w| w[1] < w[0]);
        let ratio = if gaps.len() > 1 && gaps[0] > 0.0 {
            gaps[gaps.len() - 1] / gaps[0]
        } else {
            0.0
        };
        rows.push(row(
            CheckKind::GapShrinks,
            &base,
            ratio,
            1.0,
            exact_everywhere || shrinking,
        ));
    }
    Ok(rows)
}

pub fn gradcheck_records(rows: &[GradcheckRow], opts: &GradcheckOptions) -> Vec<BenchRecord> {
    rows.iter()
        .map(|r| {
            BenchRecord::new("gradcheck", Some(opts.seed))
                .param("game", &r.game)
                .param("dim", r.dim)
                .param("check", r.check)
                .param("inner_steps", r.inner_steps)
                .param("inner_eta", num(r.inner_eta))
                .param("fd_step", num(opts.fd_step))
                .metric("value", num(r.value))
                .metric("tolerance", num(r.tolerance))
                .metric("passed", r.passed)
        })
        .collect()
}
