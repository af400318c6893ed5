//! Gradient methods for Stackelberg (leader-follower) games.
//!
//! * [`autodiff`]: scalar-tape AD with gradients and Hessian-vector products
//! * [`game`]: the game abstraction and the concrete games
//! * [`solver`]: inner dynamics, backward/forward hypergradients, outer loop
//! * [`adversarial`]: adversarial ridge regression pipeline
//! * [`bench`]: experiment drivers behind the `stackgrad` CLI

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversarial;
pub mod autodiff;
pub mod bench;
pub mod game;
pub mod solver;

pub use autodiff::{AdError, ScalarFunction, Tape};
pub use game::{quadratic_game, quartic_game, regression_game, DifferentiableGame, RegressionGameSpec, Sense};
pub use solver::{
    backward_hypergradient, fd_hypergradient, forward_hypergradient, inner_ascent, solve_stackelberg, HessianPoint,
    HypergradientReport, Method, SolutionReport, SolverConfig, SolverError,
};
