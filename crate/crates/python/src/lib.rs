//! Python bindings: games, solver settings, hypergradients, the outer loop
//! and the adversarial-regression helpers.
//!
//! Vectors cross the boundary as lists of floats and matrices as lists of
//! rows, so NumPy arrays work as inputs.

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use stackgrad::adversarial::{self, DataError};
use stackgrad::solver::{self, HypergradientReport};
use stackgrad::{
    DifferentiableGame, HessianPoint, Method, RegressionGameSpec, Sense, SolverConfig as CoreConfig, SolverError,
};

fn solver_err(e: SolverError) -> PyErr {
    match e {
        SolverError::Divergence { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn data_err(e: DataError) -> PyErr {
    match e {
        DataError::Solver(inner) => solver_err(inner),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let k = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    if k == 0 || p == 0 {
        return Err(PyValueError::new_err("matrix must be nonempty"));
    }
    if rows.iter().any(|r| r.len() != p) {
        return Err(PyValueError::new_err("matrix rows have different lengths"));
    }
    Ok(DMatrix::from_fn(k, p, |i, j| rows[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// A two-player game with a leader (`alpha`) and a follower (`beta`).
#[pyclass(name = "Game", module = "stackgrad", frozen)]
struct Game {
    inner: DifferentiableGame,
}

#[pymethods]
impl Game {
    /// Quadratic game with equilibrium at alpha = beta = -3.5 per coordinate.
    #[staticmethod]
    fn quadratic(n: usize) -> PyResult<Self> {
        let inner = stackgrad::quadratic_game(n).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Game { inner })
    }

    /// Quartic variant whose follower curvature depends on beta.
    #[staticmethod]
    fn quartic(n: usize) -> PyResult<Self> {
        let inner = stackgrad::quartic_game(n).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Game { inner })
    }

    /// Adversarial ridge regression: the leader picks weights, the attacker
    /// moves the feature rows `x` at cost `c_d`.
    #[staticmethod]
    #[pyo3(signature = (x, y, c_d, ridge, cost_leader = 1.0))]
    fn regression(x: Vec<Vec<f64>>, y: Vec<f64>, c_d: f64, ridge: f64, cost_leader: f64) -> PyResult<Self> {
        let spec = RegressionGameSpec {
            cost_leader,
            ..RegressionGameSpec::new(matrix(&x)?, DVector::from_vec(y), c_d, ridge)
        };
        let inner = stackgrad::regression_game(&spec).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Game { inner })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name().to_string()
    }

    /// `"maximize"` or `"minimize"`.
    #[getter]
    fn sense(&self) -> &'static str {
        match self.inner.sense() {
            Sense::Maximize => "maximize",
            Sense::Minimize => "minimize",
        }
    }

    #[getter]
    fn leader_dim(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn follower_dim(&self) -> usize {
        self.inner.m()
    }

    /// `(leader objective, follower objective)` at `(alpha, beta)`.
    fn evaluate(&self, alpha: Vec<f64>, beta: Vec<f64>) -> PyResult<(f64, f64)> {
        self.inner
            .evaluate_pair(&alpha, &beta)
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!(
            "Game({}, leader_dim={}, follower_dim={})",
            self.inner.name(),
            self.inner.n(),
            self.inner.m()
        )
    }
}

/// Inner and outer loop settings.
#[pyclass(name = "SolverConfig", module = "stackgrad", skip_from_py_object)]
#[derive(Clone)]
struct SolverConfig {
    inner: CoreConfig,
}

#[pymethods]
impl SolverConfig {
    #[new]
    #[pyo3(signature = (
        inner_steps = 40,
        inner_eta = 0.1,
        outer_steps = 40,
        outer_eta = 0.1,
        method = "backward",
        hessian_point = "next",
        beta0 = None,
        alpha0 = None,
        convergence_warn_tol = 1e-3,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        inner_steps: usize,
        inner_eta: f64,
        outer_steps: usize,
        outer_eta: f64,
        method: &str,
        hessian_point: &str,
        beta0: Option<Vec<f64>>,
        alpha0: Option<Vec<f64>>,
        convergence_warn_tol: f64,
    ) -> PyResult<Self> {
        let mut cfg = SolverConfig {
            inner: CoreConfig {
                inner_steps,
                inner_eta,
                outer_steps,
                outer_eta,
                beta0,
                alpha0,
                convergence_warn_tol,
                ..CoreConfig::default()
            },
        };
        cfg.set_method(method)?;
        cfg.set_hessian_point(hessian_point)?;
        cfg.inner.validate().map_err(solver_err)?;
        Ok(cfg)
    }

    #[getter]
    fn inner_steps(&self) -> usize {
        self.inner.inner_steps
    }
    #[setter]
    fn set_inner_steps(&mut self, v: usize) {
        self.inner.inner_steps = v;
    }
    #[getter]
    fn inner_eta(&self) -> f64 {
        self.inner.inner_eta
    }
    #[setter]
    fn set_inner_eta(&mut self, v: f64) {
        self.inner.inner_eta = v;
    }
    #[getter]
    fn outer_steps(&self) -> usize {
        self.inner.outer_steps
    }
    #[setter]
    fn set_outer_steps(&mut self, v: usize) {
        self.inner.outer_steps = v;
    }
    #[getter]
    fn outer_eta(&self) -> f64 {
        self.inner.outer_eta
    }
    #[setter]
    fn set_outer_eta(&mut self, v: f64) {
        self.inner.outer_eta = v;
    }
    #[getter]
    fn beta0(&self) -> Option<Vec<f64>> {
        self.inner.beta0.clone()
    }
    #[setter]
    fn set_beta0(&mut self, v: Option<Vec<f64>>) {
        self.inner.beta0 = v;
    }
    #[getter]
    fn alpha0(&self) -> Option<Vec<f64>> {
        self.inner.alpha0.clone()
    }
    #[setter]
    fn set_alpha0(&mut self, v: Option<Vec<f64>>) {
        self.inner.alpha0 = v;
    }

    #[getter]
    fn method(&self) -> String {
        self.inner.method.to_string()
    }
    #[setter]
    fn set_method(&mut self, v: &str) -> PyResult<()> {
        self.inner.method = v.parse::<Method>().map_err(PyValueError::new_err)?;
        Ok(())
    }

    /// `"next"` (Hessians at beta_{t+1}) or `"current"` (at beta_t).
    #[getter]
    fn hessian_point(&self) -> &'static str {
        match self.inner.hessian_point {
            HessianPoint::NextIterate => "next",
            HessianPoint::CurrentIterate => "current",
        }
    }
    #[setter]
    fn set_hessian_point(&mut self, v: &str) -> PyResult<()> {
        self.inner.hessian_point = match v {
            "next" => HessianPoint::NextIterate,
            "current" => HessianPoint::CurrentIterate,
            other => {
                return Err(PyValueError::new_err(format!(
                    "hessian_point must be `next` or `current`, got `{other}`"
                )))
            }
        };
        Ok(())
    }

    fn __repr__(&self) -> String {
        format!(
            "SolverConfig(inner_steps={}, inner_eta={}, outer_steps={}, outer_eta={}, method='{}', hessian_point='{}')",
            self.inner.inner_steps,
            self.inner.inner_eta,
            self.inner.outer_steps,
            self.inner.outer_eta,
            self.inner.method,
            self.hessian_point()
        )
    }
}

fn config_or_default(config: Option<PyRef<'_, SolverConfig>>) -> CoreConfig {
    config.map(|c| c.inner.clone()).unwrap_or_default()
}

fn report_dict<'py>(py: Python<'py>, r: HypergradientReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("grad", r.grad)?;
    d.set_item("beta_t", r.beta_t)?;
    d.set_item("leader_value", r.leader_value)?;
    d.set_item("inner_residual", r.inner_residual)?;
    d.set_item("wall_time", r.wall_time)?;
    d.set_item("peak_trace_length", r.peak_trace_length)?;
    d.set_item("warning", r.warning)?;
    Ok(d)
}

/// Follower iterates `[beta_0, ..., beta_T]` of gradient play on `game`.
#[pyfunction]
fn inner_ascent(game: &Game, alpha: Vec<f64>, steps: usize, eta: f64, beta0: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    solver::inner_ascent(&game.inner, &alpha, steps, eta, &beta0).map_err(solver_err)
}

/// Adjoint hypergradient; returns a dict with `grad`, `beta_t`,
/// `leader_value`, `inner_residual`, `wall_time`, `peak_trace_length`, `warning`.
#[pyfunction]
#[pyo3(signature = (game, alpha, config = None))]
fn backward_hypergradient<'py>(
    py: Python<'py>,
    game: &Game,
    alpha: Vec<f64>,
    config: Option<PyRef<'_, SolverConfig>>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config_or_default(config);
    let r = py
        .detach(|| solver::backward_hypergradient(&game.inner, &alpha, &cfg))
        .map_err(solver_err)?;
    report_dict(py, r)
}

/// Forward-sensitivity hypergradient; same dict as `backward_hypergradient`.
#[pyfunction]
#[pyo3(signature = (game, alpha, config = None))]
fn forward_hypergradient<'py>(
    py: Python<'py>,
    game: &Game,
    alpha: Vec<f64>,
    config: Option<PyRef<'_, SolverConfig>>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config_or_default(config);
    let r = py
        .detach(|| solver::forward_hypergradient(&game.inner, &alpha, &cfg))
        .map_err(solver_err)?;
    report_dict(py, r)
}

/// Central-difference hypergradient of the unrolled objective.
#[pyfunction]
#[pyo3(signature = (game, alpha, config = None, step = 1.4901161193847656e-8))]
fn fd_hypergradient(
    py: Python<'_>,
    game: &Game,
    alpha: Vec<f64>,
    config: Option<PyRef<'_, SolverConfig>>,
    step: f64,
) -> PyResult<Vec<f64>> {
    let cfg = config_or_default(config);
    py.detach(|| solver::fd_hypergradient(&game.inner, &alpha, &cfg, step))
        .map_err(solver_err)
}

/// Outer gradient loop. Returns a dict with the paths, final iterates and
/// `failure` (None, or the divergence message for a partial run).
#[pyfunction]
#[pyo3(signature = (game, config = None))]
fn solve_stackelberg<'py>(
    py: Python<'py>,
    game: &Game,
    config: Option<PyRef<'_, SolverConfig>>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config_or_default(config);
    let r = py
        .detach(|| solver::solve_stackelberg(&game.inner, &cfg))
        .map_err(solver_err)?;
    let d = PyDict::new(py);
    d.set_item("alpha_path", r.alpha_path)?;
    d.set_item("final_alpha", r.final_alpha)?;
    d.set_item("final_beta", r.final_beta)?;
    d.set_item("leader_objective_path", r.leader_objective_path)?;
    d.set_item("gradient_norm_path", r.gradient_norm_path)?;
    d.set_item("total_wall_time", r.total_wall_time)?;
    d.set_item("peak_trace_length", r.peak_trace_length)?;
    d.set_item("warnings", r.warnings)?;
    d.set_item("failure", r.failure.map(|e| e.to_string()))?;
    Ok(d)
}

/// `(X^T X + rho I)^{-1} X^T y`.
#[pyfunction]
fn ridge_fit(x: Vec<Vec<f64>>, y: Vec<f64>, rho: f64) -> PyResult<Vec<f64>> {
    let w = adversarial::ridge_fit(&matrix(&x)?, &DVector::from_vec(y), rho).map_err(data_err)?;
    Ok(w.as_slice().to_vec())
}

/// The attacker's exact best response to weights `w`.
#[pyfunction]
fn attacker_closed_form(x: Vec<Vec<f64>>, w: Vec<f64>, c_d: f64) -> PyResult<Vec<Vec<f64>>> {
    let x = matrix(&x)?;
    if w.len() != x.ncols() {
        return Err(PyValueError::new_err(format!(
            "{} weights for {} features",
            w.len(),
            x.ncols()
        )));
    }
    Ok(rows_of(&adversarial::attacker_closed_form(
        &x,
        &DVector::from_vec(w),
        c_d,
    )))
}

type Synthetic = (Vec<Vec<f64>>, Vec<f64>, Vec<f64>);

/// Seeded linear-model data: `(x rows, y, true weights)`.
#[pyfunction]
fn synth_dataset(seed: u64, k: usize, p: usize, noise_std: f64) -> PyResult<Synthetic> {
    let s = adversarial::synth_dataset(seed, k, p, noise_std).map_err(data_err)?;
    Ok((
        rows_of(&s.dataset.x),
        s.dataset.y.as_slice().to_vec(),
        s.true_weights.as_slice().to_vec(),
    ))
}

#[pymodule(name = "stackgrad")]
fn stackgrad_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Game>()?;
    m.add_class::<SolverConfig>()?;
    m.add_function(wrap_pyfunction!(inner_ascent, m)?)?;
    m.add_function(wrap_pyfunction!(backward_hypergradient, m)?)?;
    m.add_function(wrap_pyfunction!(forward_hypergradient, m)?)?;
    m.add_function(wrap_pyfunction!(fd_hypergradient, m)?)?;
    m.add_function(wrap_pyfunction!(solve_stackelberg, m)?)?;
    m.add_function(wrap_pyfunction!(ridge_fit, m)?)?;
    m.add_function(wrap_pyfunction!(attacker_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(synth_dataset, m)?)?;
    Ok(())
}
