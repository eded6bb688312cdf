//! Physics-informed neural-network solving for small systems of first-order
//! ODEs, with a classical Runge-Kutta reference path for validation.
//!
//! The crate trains feed-forward networks so that their outputs satisfy a
//! user-supplied ODE system: residuals of the equations (evaluated with exact
//! network time derivatives) plus initial-condition mismatches form a weighted
//! loss that a dense BFGS optimizer drives toward zero. Systems are written in
//! a small textual DSL ([`expr`]), networks can be one multi-output model or
//! one single-output model per state variable ([`net`]), loss terms can be
//! re-balanced adaptively during training ([`loss`]), and trained models are
//! checked against adaptive Runge-Kutta trajectories ([`odeint`], [`metrics`]).
//!
//! The `pinnworks` binary exposes the three workflows end to end: `train`,
//! `simulate`, and `compare`.

// Float validation deliberately uses negated comparisons (`!(x > 0.0)`) so
// that NaN fails validation; spelling them via `partial_cmp` would bury that.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// The numeric kernels index several parallel arrays with one loop variable;
// rewriting them around a single iterator would obscure the pairing.
#![allow(clippy::needless_range_loop)]

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod expr;
pub mod loss;
pub mod metrics;
pub mod models;
pub mod net;
pub mod odeint;
pub mod optim;
pub mod plot;
pub mod tape;
