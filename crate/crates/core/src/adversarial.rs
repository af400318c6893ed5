//! Adversarial regression: data handling, the ridge baseline, the
//! closed-form attacker and the Stackelberg ("Nash") learner.
//!
//! The attacker sees the learner's weights `w` and moves each feature row
//! to minimize `c_d (w . xbar)^2 + |x - xbar|^2`, which has the unique
//! solution `xbar = x - c_d (w . x) / (1 + c_d |w|^2) w`.

use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::game::{flatten_rows, regression_game, GameError, RegressionGameSpec};
use crate::solver::{solve_stackelberg, Method, SolutionReport, SolverConfig, SolverError};

/// Columns in the UCI wine-quality CSV: 11 indicators then `quality`.
pub const WINE_COLUMNS: usize = 12;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("expected {expected} columns, found {found}")]
    ColumnCount { expected: usize, found: usize },
    #[error("dataset is empty")]
    Empty,
    #[error("{0}")]
    Invalid(String),
    #[error("feature `{0}` has zero variance")]
    ZeroVariance(String),
    #[error("requested {requested} principal components but the training data has rank {achieved}")]
    Rank { requested: usize, achieved: usize },
    #[error("normal equations are singular; use a positive ridge penalty")]
    Singular,
    #[error(transparent)]
    Solver(#[from] SolverError),
}

impl From<GameError> for DataError {
    fn from(e: GameError) -> Self {
        DataError::Solver(SolverError::Game(e))
    }
}

/// Per-feature affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardization {
    /// Fits means and population standard deviations column-wise.
    pub fn fit(x: &DMatrix<f64>, names: &[String]) -> Result<Self, DataError> {
        let k = x.nrows();
        if k == 0 {
            return Err(DataError::Empty);
        }
        let mut means = Vec::with_capacity(x.ncols());
        let mut stds = Vec::with_capacity(x.ncols());
        for (j, col) in x.column_iter().enumerate() {
            let mean = col.mean();
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k as f64;
            let std = var.sqrt();
            if !(std > 1e-12 * (1.0 + mean.abs())) {
                let name = names.get(j).cloned().unwrap_or_else(|| format!("x{j}"));
                return Err(DataError::ZeroVariance(name));
            }
            means.push(mean);
            stds.push(std);
        }
        Ok(Standardization { means, stds })
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col.apply(|v| *v = (*v - self.means[j]) / self.stds[j]);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub feature_names: Vec<String>,
    /// Set once the features have been standardized.
    pub standardization: Option<Standardization>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, feature_names: Vec<String>) -> Result<Self, DataError> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(DataError::Empty);
        }
        if y.len() != x.nrows() {
            return Err(DataError::Invalid(format!(
                "{} targets for {} rows",
                y.len(),
                x.nrows()
            )));
        }
        if feature_names.len() != x.ncols() {
            return Err(DataError::Invalid(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                x.ncols()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(DataError::Invalid("dataset contains non-finite values".into()));
        }
        Ok(Dataset {
            x,
            y,
            feature_names,
            standardization: None,
        })
    }

    pub fn k(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn rows(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(indices),
            y: self.y.select_rows(indices),
            feature_names: self.feature_names.clone(),
            standardization: self.standardization.clone(),
        }
    }

    /// Random split with `round(fraction * k)` rows (at least one on each side) in the first part.
    pub fn split(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DataError> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(DataError::Invalid(format!(
                "split fraction must be in (0, 1), got {fraction}"
            )));
        }
        let k = self.k();
        if k < 2 {
            return Err(DataError::Invalid("need at least 2 rows to split".into()));
        }
        let mut idx: Vec<usize> = (0..k).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = ((fraction * k as f64).round() as usize).clamp(1, k - 1);
        Ok((self.rows(&idx[..cut]), self.rows(&idx[cut..])))
    }

    /// A random subset of `count` rows (all rows if `count >= k`), in original order.
    pub fn subsample(&self, count: usize, seed: u64) -> Dataset {
        if count >= self.k() {
            return self.clone();
        }
        let mut idx: Vec<usize> = (0..self.k()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut keep = idx[..count].to_vec();
        keep.sort_unstable();
        self.rows(&keep)
    }

    pub fn with_features(&self, x: DMatrix<f64>, names: Vec<String>) -> Dataset {
        Dataset {
            x,
            y: self.y.clone(),
            feature_names: names,
            standardization: self.standardization.clone(),
        }
    }
}

/// Standardizes both splits with parameters fitted on `train` only.
pub fn standardize_pair(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset), DataError> {
    let st = Standardization::fit(&train.x, &train.feature_names)?;
    let mut tr = train.with_features(st.apply(&train.x), train.feature_names.clone());
    let mut te = test.with_features(st.apply(&test.x), test.feature_names.clone());
    tr.standardization = Some(st.clone());
    te.standardization = Some(st);
    Ok((tr, te))
}

#[derive(Debug, Clone)]
pub struct WineCsv {
    pub dataset: Dataset,
    /// Data rows skipped because a field failed to parse or the row had the wrong width.
    pub malformed_rows: usize,
}

/// Reads the semicolon-delimited UCI wine-quality file (header row, 11
/// indicator columns, `quality` last).
pub fn load_wine_csv(path: impl AsRef<Path>) -> Result<WineCsv, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b';')
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = reader.headers()?.clone();
    if header.len() != WINE_COLUMNS {
        return Err(DataError::ColumnCount {
            expected: WINE_COLUMNS,
            found: header.len(),
        });
    }
    let names: Vec<String> = header.iter().take(WINE_COLUMNS - 1).map(str::to_string).collect();

    let mut values = Vec::new();
    let mut targets = Vec::new();
    let mut malformed = 0;
    for record in reader.records() {
        let record = record?;
        if record.len() != WINE_COLUMNS {
            malformed += 1;
            continue;
        }
        let parsed: Option<Vec<f64>> = record
            .iter()
            .map(|s| s.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect();
        match parsed {
            Some(row) => {
                values.extend_from_slice(&row[..WINE_COLUMNS - 1]);
                targets.push(row[WINE_COLUMNS - 1]);
            }
            None => malformed += 1,
        }
    }
    if targets.is_empty() {
        return Err(DataError::Empty);
    }
    let x = DMatrix::from_row_slice(targets.len(), WINE_COLUMNS - 1, &values);
    let dataset = Dataset::new(x, DVector::from_vec(targets), names)?;
    Ok(WineCsv {
        dataset,
        malformed_rows: malformed,
    })
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub true_weights: DVector<f64>,
}

/// Linear-model data `y = X w + noise` with standard-normal features and
/// weights drawn as `N(0, 1/p)`, deterministic in `seed`.
pub fn synth_dataset(seed: u64, k: usize, p: usize, noise_std: f64) -> Result<SyntheticData, DataError> {
    synth_dataset_scaled(seed, k, p, 1.0, noise_std)
}

/// Same as [`synth_dataset`] with weights drawn as `N(0, signal_std^2/p)`, so
/// the noiseless targets have standard deviation close to `signal_std`.
pub fn synth_dataset_scaled(
    seed: u64,
    k: usize,
    p: usize,
    signal_std: f64,
    noise_std: f64,
) -> Result<SyntheticData, DataError> {
    if k == 0 || p == 0 {
        return Err(DataError::Invalid(format!(
            "synthetic data needs k, p >= 1 (got {k}, {p})"
        )));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(DataError::Invalid(format!("noise_std must be >= 0 (got {noise_std})")));
    }
    if !(signal_std >= 0.0 && signal_std.is_finite()) {
        return Err(DataError::Invalid(format!(
            "signal_std must be >= 0 (got {signal_std})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let scale = signal_std / (p as f64).sqrt();
    let w = DVector::from_fn(p, |_, _| normal() * scale);
    let x = DMatrix::from_fn(k, p, |_, _| normal());
    let noise = DVector::from_fn(k, |_, _| normal() * noise_std);
    let y = &x * &w + noise;
    let names = (0..p).map(|j| format!("x{j}")).collect();
    Ok(SyntheticData {
        dataset: Dataset::new(x, y, names)?,
        true_weights: w,
    })
}

/// Signal and noise levels of the offline stand-in for the white-wine data:
/// quality has std ~0.89 and a linear fit explains ~28% of its variance.
pub const WINE_LIKE_SIGNAL_STD: f64 = 0.47;
pub const WINE_LIKE_NOISE_STD: f64 = 0.75;

/// Offline substitute for the wine file: 11 features, wine-like signal to noise.
pub fn wine_like_dataset(seed: u64, k: usize) -> Result<SyntheticData, DataError> {
    synth_dataset_scaled(seed, k, WINE_COLUMNS - 1, WINE_LIKE_SIGNAL_STD, WINE_LIKE_NOISE_STD)
}

/// Principal axes of a training matrix.
#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: DVector<f64>,
    /// `p x components`, orthonormal columns by decreasing variance.
    pub axes: DMatrix<f64>,
    pub variances: Vec<f64>,
}

impl Pca {
    pub fn fit(x: &DMatrix<f64>, components: usize) -> Result<Self, DataError> {
        let (k, p) = x.shape();
        if k < 2 {
            return Err(DataError::Invalid("PCA needs at least 2 rows".into()));
        }
        if components == 0 || components > p {
            return Err(DataError::Invalid(format!(
                "components must be in 1..={p}, got {components}"
            )));
        }
        let mean = x.row_mean().transpose();
        let mut centered = x.clone();
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let cov = centered.tr_mul(&centered) / (k as f64 - 1.0);
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let top = eig.eigenvalues[order[0]].max(0.0);
        let tol = top * 1e-10 * p as f64;
        let rank = order.iter().filter(|&&i| eig.eigenvalues[i] > tol).count();
        if rank < components {
            return Err(DataError::Rank {
                requested: components,
                achieved: rank,
            });
        }
        let mut axes = DMatrix::zeros(p, components);
        for (c, &i) in order.iter().take(components).enumerate() {
            let mut v = eig.eigenvectors.column(i).into_owned();
            // fix the sign so the largest-magnitude loading is positive
            let lead = v
                .iter()
                .copied()
                .fold(0.0_f64, |acc, e| if e.abs() > acc.abs() { e } else { acc });
            if lead < 0.0 {
                v.neg_mut();
            }
            axes.set_column(c, &v);
        }
        let variances = order.iter().take(components).map(|&i| eig.eigenvalues[i]).collect();
        Ok(Pca { mean, axes, variances })
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut centered = x.clone();
        for mut row in centered.row_iter_mut() {
            row -= self.mean.transpose();
        }
        centered * &self.axes
    }

    pub fn inverse_transform(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = z * self.axes.transpose();
        for mut row in x.row_iter_mut() {
            row += self.mean.transpose();
        }
        x
    }
}

/// Projects both matrices onto the top principal axes of `train`.
pub fn pca_transform(
    train: &DMatrix<f64>,
    other: &DMatrix<f64>,
    components: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>), DataError> {
    if other.ncols() != train.ncols() {
        return Err(DataError::Invalid(format!(
            "train has {} features, other has {}",
            train.ncols(),
            other.ncols()
        )));
    }
    let pca = Pca::fit(train, components)?;
    Ok((pca.transform(train), pca.transform(other)))
}

/// `w = (X^T X + rho I)^{-1} X^T y` through a Cholesky factorization.
pub fn ridge_fit(x: &DMatrix<f64>, y: &DVector<f64>, rho: f64) -> Result<DVector<f64>, DataError> {
    if !(rho >= 0.0) {
        return Err(DataError::Invalid(format!("ridge penalty must be >= 0, got {rho}")));
    }
    if x.nrows() != y.len() {
        return Err(DataError::Invalid(format!(
            "{} rows but {} targets",
            x.nrows(),
            y.len()
        )));
    }
    let p = x.ncols();
    let mut gram = x.tr_mul(x);
    for j in 0..p {
        gram[(j, j)] += rho;
    }
    let scale = gram.diagonal().max();
    let chol = gram.cholesky().ok_or(DataError::Singular)?;
    let l = chol.l_dirty();
    let min_pivot = (0..p).map(|j| l[(j, j)] * l[(j, j)]).fold(f64::INFINITY, f64::min);
    if !(min_pivot > scale * f64::EPSILON * p as f64) {
        return Err(DataError::Singular);
    }
    Ok(chol.solve(&x.tr_mul(y)))
}

pub fn rmse(predictions: &DVector<f64>, targets: &DVector<f64>) -> f64 {
    let k = targets.len() as f64;
    ((predictions - targets).norm_squared() / k).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HoldoutSelection {
    pub best_rho: f64,
    /// `(rho, mean validation RMSE)` in grid order.
    pub table: Vec<(f64, f64)>,
}

/// Picks the ridge penalty with the lowest mean validation RMSE over
/// `repetitions` random splits; ties go to the larger penalty.
pub fn repeated_holdout_select(
    data: &Dataset,
    rho_grid: &[f64],
    repetitions: usize,
    split_fraction: f64,
    seed: u64,
) -> Result<HoldoutSelection, DataError> {
    if rho_grid.is_empty() {
        return Err(DataError::Invalid("empty ridge grid".into()));
    }
    if repetitions == 0 {
        return Err(DataError::Invalid("repetitions must be >= 1".into()));
    }
    let mut sums = vec![0.0; rho_grid.len()];
    for rep in 0..repetitions {
        let rep_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(rep as u64);
        let (train, valid) = data.split(split_fraction, rep_seed)?;
        for (sum, &rho) in sums.iter_mut().zip(rho_grid) {
            let w = ridge_fit(&train.x, &train.y, rho)?;
            *sum += rmse(&(&valid.x * &w), &valid.y);
        }
    }
    let table: Vec<(f64, f64)> = rho_grid
        .iter()
        .zip(&sums)
        .map(|(&rho, &s)| (rho, s / repetitions as f64))
        .collect();
    let mut best = table[0];
    for &(rho, err) in &table[1..] {
        if err < best.1 || (err == best.1 && rho > best.0) {
            best = (rho, err);
        }
    }
    Ok(HoldoutSelection {
        best_rho: best.0,
        table,
    })
}

/// The attacker's exact best response to weights `w` (target value 0).
pub fn attacker_closed_form(x: &DMatrix<f64>, w: &DVector<f64>, c_d: f64) -> DMatrix<f64> {
    assert_eq!(x.ncols(), w.len(), "feature dimension mismatch");
    let shrink = c_d / (1.0 + c_d * w.norm_squared());
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        let pred = row.dot(&w.transpose());
        for (xj, wj) in row.iter_mut().zip(w.iter()) {
            *xj -= shrink * pred * wj;
        }
    }
    out
}

/// RMSE of `w` on the test set after the attacker's best response.
pub fn evaluate_under_attack(w: &DVector<f64>, test: &Dataset, c_d: f64) -> Result<f64, DataError> {
    if w.len() != test.p() {
        return Err(DataError::Invalid(format!(
            "weights have {} entries, test data has {} features",
            w.len(),
            test.p()
        )));
    }
    let attacked = attacker_closed_form(&test.x, w, c_d);
    Ok(rmse(&(attacked * w), &test.y))
}

/// Solver settings of the reference wine experiment: backward method,
/// 100 inner steps at 0.01, 350 outer epochs at 1e-6.
pub fn reference_solver_config() -> SolverConfig {
    SolverConfig {
        inner_steps: 100,
        inner_eta: 0.01,
        outer_steps: 350,
        outer_eta: 1e-6,
        method: Method::Backward,
        ..SolverConfig::default()
    }
}

#[derive(Debug, Clone)]
pub struct NashFit {
    pub weights: DVector<f64>,
    pub report: SolutionReport,
}

/// Trains the Stackelberg learner against an attacker with cost `c_d`.
///
/// Unless the config says otherwise, the leader starts from the ridge
/// solution and the attacker's inner dynamics start from the clean data.
pub fn nash_train(train: &Dataset, c_d: f64, config: &SolverConfig, rho: f64, c_l: f64) -> Result<NashFit, DataError> {
    let spec = RegressionGameSpec {
        cost_leader: c_l,
        ..RegressionGameSpec::new(train.x.clone(), train.y.clone(), c_d, rho)
    };
    let game = regression_game(&spec)?;
    let mut config = config.clone();
    if config.alpha0.is_none() {
        config.alpha0 = Some(ridge_fit(&train.x, &train.y, rho)?.as_slice().to_vec());
    }
    if config.beta0.is_none() {
        config.beta0 = Some(flatten_rows(&train.x));
    }
    let report = solve_stackelberg(&game, &config)?;
    if let Some(err) = report.failure.clone() {
        return Err(err.into());
    }
    Ok(NashFit {
        weights: DVector::from_vec(report.final_alpha.clone()),
        report,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub c_d: f64,
    pub rho: f64,
    pub rmse_nash: f64,
    pub rmse_raw: f64,
    pub seed: u64,
    pub seconds_per_outer_epoch: f64,
    pub k_train: usize,
    pub k_test: usize,
    /// Leader step actually used.
    pub outer_eta: f64,
}

/// How the leader's step size is chosen for the regression experiments.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum OuterStep {
    /// `solver.outer_eta` as given.
    #[default]
    Fixed,
    /// `1 / L` with `L = 2 (c_l lambda_max(X^T X) + rho)` from the training split.
    Curvature,
}

/// Inverse of the largest curvature of the unattacked leader cost
/// `c_l |X w - y|^2 + rho |w|^2`.
pub fn curvature_outer_eta(x: &DMatrix<f64>, rho: f64, c_l: f64) -> f64 {
    let top = SymmetricEigen::new(x.tr_mul(x)).eigenvalues.max();
    1.0 / (2.0 * (c_l * top + rho))
}

#[derive(Debug, Clone)]
pub struct ExperimentOptions {
    pub c_d_grid: Vec<f64>,
    pub rho_grid: Vec<f64>,
    pub repetitions: usize,
    pub train_fraction: f64,
    /// Principal components kept; `None` keeps all features.
    pub components: Option<usize>,
    pub c_l: f64,
    pub solver: SolverConfig,
    pub outer_step: OuterStep,
}

impl ExperimentOptions {
    /// Solver settings for training on `train` with penalty `rho`.
    pub fn solver_for(&self, train: &Dataset, rho: f64) -> SolverConfig {
        match self.outer_step {
            OuterStep::Fixed => self.solver.clone(),
            OuterStep::Curvature => SolverConfig {
                outer_eta: curvature_outer_eta(&train.x, rho, self.c_l),
                ..self.solver.clone()
            },
        }
    }
}

pub fn default_rho_grid() -> Vec<f64> {
    vec![1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0]
}

pub fn default_c_d_grid() -> Vec<f64> {
    vec![0.0, 0.01, 0.05, 0.1, 0.5, 1.0]
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            c_d_grid: default_c_d_grid(),
            rho_grid: default_rho_grid(),
            repetitions: 10,
            train_fraction: 2.0 / 3.0,
            components: None,
            c_l: 1.0,
            solver: reference_solver_config(),
            outer_step: OuterStep::Fixed,
        }
    }
}

/// Train/test split after standardization and PCA, with the selected penalty.
#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub train: Dataset,
    pub test: Dataset,
    pub selection: HoldoutSelection,
    pub ridge_weights: DVector<f64>,
}

pub fn prepare_split(data: &Dataset, seed: u64, opts: &ExperimentOptions) -> Result<PreparedSplit, DataError> {
    let (train, test) = data.split(opts.train_fraction, seed)?;
    let (train, test) = standardize_pair(&train, &test)?;
    let components = opts.components.unwrap_or(train.p());
    let (xt, xs) = pca_transform(&train.x, &test.x, components)?;
    let names: Vec<String> = (0..components).map(|c| format!("pc{c}")).collect();
    let train = train.with_features(xt, names.clone());
    let test = test.with_features(xs, names);
    let selection = repeated_holdout_select(&train, &opts.rho_grid, opts.repetitions, opts.train_fraction, seed)?;
    let ridge_weights = ridge_fit(&train.x, &train.y, selection.best_rho)?;
    Ok(PreparedSplit {
        train,
        test,
        selection,
        ridge_weights,
    })
}

/// Raw-vs-Nash comparison for every `c_d` in the grid on one seeded split.
/// Grid points run in parallel.
pub fn run_regression_experiment(
    data: &Dataset,
    seed: u64,
    opts: &ExperimentOptions,
) -> Result<Vec<ExperimentResult>, DataError> {
    let prepared = prepare_split(data, seed, opts)?;
    opts.c_d_grid
        .par_iter()
        .map(|&c_d| evaluate_grid_point(&prepared, c_d, seed, opts))
        .collect()
}

pub fn evaluate_grid_point(
    prepared: &PreparedSplit,
    c_d: f64,
    seed: u64,
    opts: &ExperimentOptions,
) -> Result<ExperimentResult, DataError> {
    let rho = prepared.selection.best_rho;
    let start = Instant::now();
    let solver = opts.solver_for(&prepared.train, rho);
    let nash = nash_train(&prepared.train, c_d, &solver, rho, opts.c_l)?;
    let elapsed = start.elapsed().as_secs_f64();
    Ok(ExperimentResult {
        c_d,
        rho,
        rmse_nash: evaluate_under_attack(&nash.weights, &prepared.test, c_d)?,
        rmse_raw: evaluate_under_attack(&prepared.ridge_weights, &prepared.test, c_d)?,
        seed,
        seconds_per_outer_epoch: elapsed / opts.solver.outer_steps.max(1) as f64,
        k_train: prepared.train.k(),
        k_test: prepared.test.k(),
        outer_eta: solver.outer_eta,
    })
}
