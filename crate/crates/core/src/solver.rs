//! Hypergradient estimators and the outer gradient loop.
//!
//! The follower's best response is approximated by `T` steps of gradient
//! ascent (descent for cost games) from `beta0`. The leader's total
//! derivative through that unrolled response is computed either
//!
//! * backward: store the whole inner trace, then run the adjoint recursion in
//!   reverse using Hessian-vector products, or
//! * forward: carry the `m x n` sensitivity `d beta_t / d alpha` alongside the
//!   inner iteration, overwriting the iterate as it goes.
//!
//! All formulas below are in utility-maximizing form; `Sense::Minimize`
//! flips the sign of every step.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::autodiff::AdError;
use crate::game::{DifferentiableGame, GameError, ALPHA, BETA};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("non-finite value in {stage} at iteration {iteration}")]
    Divergence { stage: &'static str, iteration: usize },
    #[error(transparent)]
    Game(#[from] GameError),
}

impl From<AdError> for SolverError {
    fn from(e: AdError) -> Self {
        SolverError::Game(GameError::Ad(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Backward,
    Forward,
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "backward" => Ok(Method::Backward),
            "forward" => Ok(Method::Forward),
            other => Err(format!("unknown method `{other}` (expected backward or forward)")),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Backward => "backward",
            Method::Forward => "forward",
        })
    }
}

/// Where the backward recursion evaluates its second derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HessianPoint {
    /// At `beta_{t+1}` while processing step `t`. Differs from exact
    /// reverse mode by O(eta).
    #[default]
    NextIterate,
    /// At `beta_t`: exact reverse-mode differentiation of the unrolled map.
    CurrentIterate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub inner_steps: usize,
    pub inner_eta: f64,
    pub outer_steps: usize,
    pub outer_eta: f64,
    pub method: Method,
    /// Defaults to the zero vector.
    pub beta0: Option<Vec<f64>>,
    /// Defaults to the zero vector.
    pub alpha0: Option<Vec<f64>>,
    pub hessian_point: HessianPoint,
    /// Warn when `|d_beta u_A(alpha, beta_T)| > tol * (1 + |beta_T|)`.
    pub convergence_warn_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            inner_steps: 40,
            inner_eta: 0.1,
            outer_steps: 40,
            outer_eta: 0.1,
            method: Method::Backward,
            beta0: None,
            alpha0: None,
            hessian_point: HessianPoint::NextIterate,
            convergence_warn_tol: 1e-3,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if self.inner_steps == 0 {
            return Err(SolverError::Config("inner_steps must be >= 1".into()));
        }
        if !(self.inner_eta > 0.0 && self.inner_eta.is_finite()) {
            return Err(SolverError::Config(format!(
                "inner_eta must be > 0 (got {})",
                self.inner_eta
            )));
        }
        if !(self.outer_eta > 0.0 && self.outer_eta.is_finite()) {
            return Err(SolverError::Config(format!(
                "outer_eta must be > 0 (got {})",
                self.outer_eta
            )));
        }
        if !(self.convergence_warn_tol >= 0.0) {
            return Err(SolverError::Config("convergence_warn_tol must be >= 0".into()));
        }
        Ok(())
    }

    fn beta_start(&self, game: &DifferentiableGame) -> Result<Vec<f64>, SolverError> {
        start_point(self.beta0.as_deref(), game.m(), "beta0")
    }

    fn alpha_start(&self, game: &DifferentiableGame) -> Result<Vec<f64>, SolverError> {
        start_point(self.alpha0.as_deref(), game.n(), "alpha0")
    }
}

fn start_point(given: Option<&[f64]>, dim: usize, what: &str) -> Result<Vec<f64>, SolverError> {
    match given {
        None => Ok(vec![0.0; dim]),
        Some(v) if v.len() == dim => Ok(v.to_vec()),
        Some(v) => Err(SolverError::Config(format!(
            "{what} has length {}, expected {dim}",
            v.len()
        ))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypergradientReport {
    /// Total derivative of the leader objective through `beta_T(alpha)`.
    pub grad: Vec<f64>,
    pub beta_t: Vec<f64>,
    /// Leader objective at `(alpha, beta_T)`.
    pub leader_value: f64,
    /// `|d_beta u_A(alpha, beta_T)|`.
    pub inner_residual: f64,
    pub wall_time: f64,
    /// Number of inner iterates held in memory at once.
    pub peak_trace_length: usize,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionReport {
    pub alpha_path: Vec<Vec<f64>>,
    pub final_alpha: Vec<f64>,
    pub final_beta: Vec<f64>,
    pub leader_objective_path: Vec<f64>,
    pub gradient_norm_path: Vec<f64>,
    pub total_wall_time: f64,
    pub peak_trace_length: usize,
    pub warnings: usize,
    /// Set when an outer step diverged; the paths stop at the last good iterate.
    pub failure: Option<SolverError>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// One inner step `beta + s * eta * d_beta u_A(alpha, beta)`.
fn inner_step(game: &DifferentiableGame, alpha: &[f64], beta: &[f64], eta: f64) -> Result<Vec<f64>, SolverError> {
    let n = game.n();
    let step = game.sense().sign() * eta;
    let g = game.follower().at_flat(game.point(alpha, beta)?)?.full_gradient();
    Ok(beta.iter().zip(&g[n..]).map(|(b, gb)| b + step * gb).collect())
}

/// Unrolls the follower dynamics, returning all `T + 1` iterates.
pub fn inner_ascent(
    game: &DifferentiableGame,
    alpha: &[f64],
    steps: usize,
    eta: f64,
    beta0: &[f64],
) -> Result<Vec<Vec<f64>>, SolverError> {
    game.point(alpha, beta0)?;
    let mut trace = Vec::with_capacity(steps + 1);
    trace.push(beta0.to_vec());
    for t in 1..=steps {
        let next = inner_step(game, alpha, &trace[t - 1], eta)?;
        if !all_finite(&next) {
            return Err(SolverError::Divergence {
                stage: "inner ascent",
                iteration: t,
            });
        }
        trace.push(next);
    }
    Ok(trace)
}

/// Last inner iterate only.
fn inner_terminal(
    game: &DifferentiableGame,
    alpha: &[f64],
    steps: usize,
    eta: f64,
    beta0: &[f64],
) -> Result<Vec<f64>, SolverError> {
    let mut beta = beta0.to_vec();
    for t in 1..=steps {
        beta = inner_step(game, alpha, &beta, eta)?;
        if !all_finite(&beta) {
            return Err(SolverError::Divergence {
                stage: "inner ascent",
                iteration: t,
            });
        }
    }
    Ok(beta)
}

fn residual_and_warning(
    game: &DifferentiableGame,
    alpha: &[f64],
    beta_t: &[f64],
    tol: f64,
) -> Result<(f64, Option<String>), SolverError> {
    let g = game.follower().at_flat(game.point(alpha, beta_t)?)?.full_gradient();
    let residual = norm(&g[game.n()..]);
    let scale = 1.0 + norm(beta_t);
    let warning = (residual > tol * scale)
        .then(|| format!("inner dynamics not converged: residual {residual:.3e} > {tol:.1e} * {scale:.3e}"));
    Ok((residual, warning))
}

/// Adjoint (reverse) hypergradient.
///
/// With `s = +1` for utilities and `-1` for costs:
///
/// ```text
/// lambda_T = -s d_beta u_D(alpha, beta_T),   g = d_alpha u_D(alpha, beta_T)
/// for t = T-1 .. 0:
///     g        -= eta * grad_alpha <lambda_{t+1}, d_beta u_A>
///     lambda_t  = lambda_{t+1} + s eta d²_beta u_A lambda_{t+1}
/// ```
///
/// Both second-order terms come from one forward-over-reverse pass per step.
pub fn backward_hypergradient(
    game: &DifferentiableGame,
    alpha: &[f64],
    config: &SolverConfig,
) -> Result<HypergradientReport, SolverError> {
    config.validate()?;
    let start = Instant::now();
    let (n, eta, s) = (game.n(), config.inner_eta, game.sense().sign());
    let trace = inner_ascent(game, alpha, config.inner_steps, eta, &config.beta_start(game)?)?;
    let beta_t = trace.last().expect("trace holds beta0").clone();

    let leader = game.leader().at_flat(game.point(alpha, &beta_t)?)?;
    let leader_value = leader.value();
    let d_leader = leader.full_gradient();
    let mut grad = d_leader[..n].to_vec();
    let mut lambda: Vec<f64> = d_leader[n..].iter().map(|g| -s * g).collect();

    for t in (0..config.inner_steps).rev() {
        let at = match config.hessian_point {
            HessianPoint::NextIterate => &trace[t + 1],
            HessianPoint::CurrentIterate => &trace[t],
        };
        let (_, hv) = game
            .follower()
            .second_order_at(&game.point(alpha, at)?, BETA, &lambda)?;
        for (g, mixed) in grad.iter_mut().zip(&hv[..n]) {
            *g -= eta * mixed;
        }
        for (l, h) in lambda.iter_mut().zip(&hv[n..]) {
            *l += s * eta * h;
        }
        if !all_finite(&grad) || !all_finite(&lambda) {
            return Err(SolverError::Divergence {
                stage: "adjoint recursion",
                iteration: t,
            });
        }
    }

    let (inner_residual, warning) = residual_and_warning(game, alpha, &beta_t, config.convergence_warn_tol)?;
    Ok(HypergradientReport {
        grad,
        beta_t,
        leader_value,
        inner_residual,
        wall_time: start.elapsed().as_secs_f64(),
        peak_trace_length: trace.len(),
        warning,
    })
}

/// Forward-sensitivity hypergradient:
///
/// ```text
/// S_t = S_{t-1} + s eta [d_alpha d_beta u_A + d²_beta u_A S_{t-1}]   (at beta_{t-1})
/// g   = d_alpha u_D + S_T^T d_beta u_D                               (at beta_T)
/// ```
///
/// Only the current iterate and sensitivity are kept.
pub fn forward_hypergradient(
    game: &DifferentiableGame,
    alpha: &[f64],
    config: &SolverConfig,
) -> Result<HypergradientReport, SolverError> {
    config.validate()?;
    let start = Instant::now();
    let (n, m, eta, s) = (game.n(), game.m(), config.inner_eta, game.sense().sign());
    let mut beta = config.beta_start(game)?;
    game.point(alpha, &beta)?;
    let mut sens = DMatrix::<f64>::zeros(m, n);

    for t in 1..=config.inner_steps {
        let eval = game.follower().at_flat(game.point(alpha, &beta)?)?;
        let g = eval.full_gradient();
        let h_bb = eval.hessian_block(BETA, BETA)?;
        let h_ba = eval.hessian_block(BETA, ALPHA)?;
        let step = s * eta;
        sens += (h_ba + &h_bb * &sens) * step;
        for (b, gb) in beta.iter_mut().zip(&g[n..]) {
            *b += step * gb;
        }
        if !all_finite(&beta) || !sens.iter().all(|v| v.is_finite()) {
            return Err(SolverError::Divergence {
                stage: "forward sensitivity",
                iteration: t,
            });
        }
    }

    let leader = game.leader().at_flat(game.point(alpha, &beta)?)?;
    let leader_value = leader.value();
    let d_leader = leader.full_gradient();
    let partial_alpha = DVector::from_column_slice(&d_leader[..n]);
    let partial_beta = DVector::from_column_slice(&d_leader[n..]);
    let grad = partial_alpha + sens.tr_mul(&partial_beta);

    let (inner_residual, warning) = residual_and_warning(game, alpha, &beta, config.convergence_warn_tol)?;
    Ok(HypergradientReport {
        grad: grad.as_slice().to_vec(),
        beta_t: beta,
        leader_value,
        inner_residual,
        wall_time: start.elapsed().as_secs_f64(),
        peak_trace_length: 2,
        warning,
    })
}

/// Central differences of `alpha -> u_D(alpha, beta_T(alpha))` with
/// per-coordinate step `h * (1 + |alpha_i|)`.
pub fn fd_hypergradient(
    game: &DifferentiableGame,
    alpha: &[f64],
    config: &SolverConfig,
    h: f64,
) -> Result<Vec<f64>, SolverError> {
    config.validate()?;
    if !(h > 0.0) {
        return Err(SolverError::Config(format!(
            "finite-difference step must be > 0 (got {h})"
        )));
    }
    let beta0 = config.beta_start(game)?;
    game.point(alpha, &beta0)?;
    let outer = |a: &[f64]| -> Result<f64, SolverError> {
        let beta_t = inner_terminal(game, a, config.inner_steps, config.inner_eta, &beta0)?;
        Ok(game.leader().at_flat(game.point(a, &beta_t)?)?.value())
    };
    let mut grad = Vec::with_capacity(alpha.len());
    let mut probe = alpha.to_vec();
    for i in 0..alpha.len() {
        let step = h * (1.0 + alpha[i].abs());
        probe[i] = alpha[i] + step;
        let up = outer(&probe)?;
        probe[i] = alpha[i] - step;
        let down = outer(&probe)?;
        probe[i] = alpha[i];
        // the actual spacing after rounding
        let spacing = (alpha[i] + step) - (alpha[i] - step);
        grad.push((up - down) / spacing);
    }
    Ok(grad)
}

/// Dispatches on `config.method`.
pub fn hypergradient(
    game: &DifferentiableGame,
    alpha: &[f64],
    config: &SolverConfig,
) -> Result<HypergradientReport, SolverError> {
    match config.method {
        Method::Backward => backward_hypergradient(game, alpha, config),
        Method::Forward => forward_hypergradient(game, alpha, config),
    }
}

/// Fixed-step gradient ascent (descent for cost games) on the leader
/// objective, using the configured hypergradient.
///
/// Paths have `outer_steps + 1` entries: the hypergradient is evaluated at
/// every iterate including the last, which also yields `final_beta`.
pub fn solve_stackelberg(game: &DifferentiableGame, config: &SolverConfig) -> Result<SolutionReport, SolverError> {
    config.validate()?;
    let start = Instant::now();
    let mut alpha = config.alpha_start(game)?;
    game.point(&alpha, &config.beta_start(game)?)?;
    let step = game.sense().sign() * config.outer_eta;

    let mut report = SolutionReport {
        alpha_path: Vec::with_capacity(config.outer_steps + 1),
        final_alpha: Vec::new(),
        final_beta: Vec::new(),
        leader_objective_path: Vec::with_capacity(config.outer_steps + 1),
        gradient_norm_path: Vec::with_capacity(config.outer_steps + 1),
        total_wall_time: 0.0,
        peak_trace_length: 0,
        warnings: 0,
        failure: None,
    };

    for k in 0..=config.outer_steps {
        let hyper = match hypergradient(game, &alpha, config) {
            Ok(h) => h,
            Err(e @ SolverError::Divergence { .. }) => {
                report.failure = Some(e);
                break;
            }
            Err(e) => return Err(e),
        };
        report.alpha_path.push(alpha.clone());
        report.leader_objective_path.push(hyper.leader_value);
        report.gradient_norm_path.push(norm(&hyper.grad));
        report.peak_trace_length = report.peak_trace_length.max(hyper.peak_trace_length);
        report.warnings += usize::from(hyper.warning.is_some());
        report.final_alpha = alpha.clone();
        report.final_beta = hyper.beta_t;
        if k == config.outer_steps {
            break;
        }
        let next: Vec<f64> = alpha.iter().zip(&hyper.grad).map(|(a, g)| a + step * g).collect();
        if !all_finite(&next) {
            report.failure = Some(SolverError::Divergence {
                stage: "outer loop",
                iteration: k + 1,
            });
            break;
        }
        alpha = next;
    }
    report.total_wall_time = start.elapsed().as_secs_f64();
    Ok(report)
}
