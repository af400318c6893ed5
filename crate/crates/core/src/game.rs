//! Two-player leader/follower games with differentiable objectives.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::autodiff::{AdError, ScalarFunction};

/// Block name of the leader decision.
pub const ALPHA: &str = "alpha";
/// Block name of the follower decision.
pub const BETA: &str = "beta";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GameError {
    #[error("invalid game: {0}")]
    Invalid(String),
    #[error(transparent)]
    Ad(#[from] AdError),
}

/// Whether both players maximize utilities or minimize costs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Maximize,
    Minimize,
}

impl Sense {
    /// +1 for ascent, -1 for descent.
    pub fn sign(self) -> f64 {
        match self {
            Sense::Maximize => 1.0,
            Sense::Minimize => -1.0,
        }
    }
}

/// A Stackelberg game: the leader picks `alpha` (dim `n`), the follower
/// observes it and best-responds with `beta` (dim `m`).
#[derive(Debug, Clone)]
pub struct DifferentiableGame {
    name: String,
    n: usize,
    m: usize,
    leader: ScalarFunction,
    follower: ScalarFunction,
    sense: Sense,
}

impl DifferentiableGame {
    /// Both objectives must be declared over exactly the blocks
    /// `alpha` then `beta`, with matching dimensions.
    pub fn new(
        name: impl Into<String>,
        leader: ScalarFunction,
        follower: ScalarFunction,
        sense: Sense,
    ) -> Result<Self, GameError> {
        let dims = |f: &ScalarFunction, who: &str| -> Result<(usize, usize), GameError> {
            match f.blocks() {
                [a, b] if a.name == ALPHA && b.name == BETA => Ok((a.dim, b.dim)),
                _ => Err(GameError::Invalid(format!(
                    "{who} objective must take blocks ({ALPHA}, {BETA})"
                ))),
            }
        };
        let (n, m) = dims(&leader, "leader")?;
        if dims(&follower, "follower")? != (n, m) {
            return Err(GameError::Invalid(
                "leader and follower disagree on block dimensions".into(),
            ));
        }
        Ok(DifferentiableGame {
            name: name.into(),
            n,
            m,
            leader,
            follower,
            sense,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    pub fn leader(&self) -> &ScalarFunction {
        &self.leader
    }

    pub fn follower(&self) -> &ScalarFunction {
        &self.follower
    }

    /// Flat tape input `[alpha; beta]`.
    pub fn point(&self, alpha: &[f64], beta: &[f64]) -> Result<Vec<f64>, GameError> {
        self.check(alpha, beta)?;
        let mut p = Vec::with_capacity(self.n + self.m);
        p.extend_from_slice(alpha);
        p.extend_from_slice(beta);
        Ok(p)
    }

    fn check(&self, alpha: &[f64], beta: &[f64]) -> Result<(), GameError> {
        for (block, expected, actual) in [(ALPHA, self.n, alpha.len()), (BETA, self.m, beta.len())] {
            if expected != actual {
                return Err(AdError::DimensionMismatch {
                    block: block.to_string(),
                    expected,
                    actual,
                }
                .into());
            }
        }
        Ok(())
    }

    /// `(leader value, follower value)` at `(alpha, beta)`.
    pub fn evaluate_pair(&self, alpha: &[f64], beta: &[f64]) -> Result<(f64, f64), GameError> {
        let p = self.point(alpha, beta)?;
        let leader = self.leader.at_flat(p.clone())?.value();
        let follower = self.follower.at_flat(p)?.value();
        Ok((leader, follower))
    }
}

/// The separable quadratic game with closed-form equilibrium
/// `alpha* = beta* = -3.5`:
///
/// * follower utility `u_A = -sum 3 (beta_i - alpha_i)^2`, so `beta*(alpha) = alpha`
/// * leader utility `u_D = -sum (7 alpha_i + beta_i^2)`
pub fn quadratic_game(n: usize) -> Result<DifferentiableGame, GameError> {
    if n == 0 {
        return Err(GameError::Invalid("quadratic game needs n >= 1".into()));
    }
    let blocks = [(ALPHA, n), (BETA, n)];
    let leader = ScalarFunction::record(&blocks, |t, b| {
        let (a, be) = (b[0], b[1]);
        -t.sum(a.iter().zip(be).map(|(&ai, &bi)| ai * 7.0 + bi.square()))
    })?;
    let follower = ScalarFunction::record(&blocks, |t, b| {
        let (a, be) = (b[0], b[1]);
        t.sum(a.iter().zip(be).map(|(&ai, &bi)| (bi - ai).square() * -3.0))
    })?;
    DifferentiableGame::new(format!("quadratic-{n}"), leader, follower, Sense::Maximize)
}

/// A validation game whose follower curvature depends on `beta`, so the
/// second derivatives change along the inner trajectory.
///
/// * `u_A = -sum [(beta_i - alpha_i)^2 + 0.25 (beta_i - alpha_i)^4]`, best response `beta = alpha`
/// * `u_D = -sum (alpha_i - 1)^2 - sum ln(1 + beta_i^2) + 0.1 sum exp(0.5 alpha_i) beta_i`
pub fn quartic_game(n: usize) -> Result<DifferentiableGame, GameError> {
    if n == 0 {
        return Err(GameError::Invalid("quartic game needs n >= 1".into()));
    }
    let blocks = [(ALPHA, n), (BETA, n)];
    let leader = ScalarFunction::record(&blocks, |t, b| {
        let (a, be) = (b[0], b[1]);
        let spread = t.sum(a.iter().map(|&ai| (ai - 1.0).square()));
        let damp = t.sum(be.iter().map(|&bi| (bi.square() + 1.0).ln()));
        let couple = t.sum(a.iter().zip(be).map(|(&ai, &bi)| (ai * 0.5).exp() * bi));
        couple * 0.1 - spread - damp
    })?;
    let follower = ScalarFunction::record(&blocks, |t, b| {
        let (a, be) = (b[0], b[1]);
        -t.sum(a.iter().zip(be).map(|(&ai, &bi)| {
            let d = bi - ai;
            d.square() + d.powf(4.0) * 0.25
        }))
    })?;
    DifferentiableGame::new(format!("quartic-{n}"), leader, follower, Sense::Maximize)
}

/// Data and costs of the adversarial regression game.
///
/// The leader fits weights `w` (dim `p`); the follower rewrites the `k x p`
/// feature matrix, flattened row-major into a `k * p` block.
#[derive(Debug, Clone)]
pub struct RegressionGameSpec {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Follower weight on pushing predictions to `target`.
    pub cost_follower: f64,
    /// Leader weight on squared prediction error.
    pub cost_leader: f64,
    /// Ridge penalty on `w`.
    pub ridge: f64,
    /// Value the follower wants every prediction to take.
    pub target: f64,
}

impl RegressionGameSpec {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, cost_follower: f64, ridge: f64) -> Self {
        RegressionGameSpec {
            x,
            y,
            cost_follower,
            cost_leader: 1.0,
            ridge,
            target: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), GameError> {
        let (k, p) = self.x.shape();
        let fail = |msg: String| Err(GameError::Invalid(msg));
        if k == 0 || p == 0 {
            return fail(format!("regression game needs k, p >= 1 (got {k} x {p})"));
        }
        if self.y.len() != k {
            return fail(format!("y has {} entries for {k} rows", self.y.len()));
        }
        if !(self.cost_follower >= 0.0) {
            return fail(format!("c_d must be >= 0 (got {})", self.cost_follower));
        }
        if !(self.cost_leader > 0.0) {
            return fail(format!("c_l must be > 0 (got {})", self.cost_leader));
        }
        if !(self.ridge >= 0.0) {
            return fail(format!("ridge must be >= 0 (got {})", self.ridge));
        }
        if self.x.iter().chain(self.y.iter()).any(|v| !v.is_finite()) || !self.target.is_finite() {
            return fail("regression data contains non-finite values".into());
        }
        Ok(())
    }
}

/// Row-major flattening used for the follower block.
pub fn flatten_rows(x: &DMatrix<f64>) -> Vec<f64> {
    let (k, p) = x.shape();
    let mut out = Vec::with_capacity(k * p);
    for i in 0..k {
        for j in 0..p {
            out.push(x[(i, j)]);
        }
    }
    out
}

/// Inverse of [`flatten_rows`].
pub fn unflatten_rows(flat: &[f64], k: usize, p: usize) -> DMatrix<f64> {
    assert_eq!(flat.len(), k * p);
    DMatrix::from_row_slice(k, p, flat)
}

/// Adversarial regression as a cost-minimizing game:
///
/// * leader cost `sum c_l (xbar_i . w - y_i)^2 + rho |w|^2`
/// * follower cost `sum c_d (xbar_i . w - z)^2 + |X - Xbar|_F^2`
pub fn regression_game(spec: &RegressionGameSpec) -> Result<DifferentiableGame, GameError> {
    spec.validate()?;
    let (k, p) = spec.x.shape();
    let blocks = [(ALPHA, p), (BETA, k * p)];
    let leader = ScalarFunction::record(&blocks, |t, b| {
        let (w, xbar) = (b[0], b[1]);
        let fit = t.sum((0..k).map(|i| {
            let pred = t.dot(&xbar[i * p..(i + 1) * p], w);
            (pred - spec.y[i]).square()
        }));
        let penalty = t.sum(w.iter().map(|wj| wj.square()));
        fit * spec.cost_leader + penalty * spec.ridge
    })?;
    let x_flat = flatten_rows(&spec.x);
    let follower = ScalarFunction::record(&blocks, |t, b| {
        let (w, xbar) = (b[0], b[1]);
        let lure = t.sum((0..k).map(|i| {
            let pred = t.dot(&xbar[i * p..(i + 1) * p], w);
            (pred - spec.target).square()
        }));
        let moved = t.sum(xbar.iter().zip(&x_flat).map(|(&xb, &x0)| (xb - x0).square()));
        lure * spec.cost_follower + moved
    })?;
    DifferentiableGame::new(format!("regression-{k}x{p}"), leader, follower, Sense::Minimize)
}
