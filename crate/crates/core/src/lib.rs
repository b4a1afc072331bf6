//! Solver and verification toolkit for discounted continuous-time Markov
//! decision processes (CTMDPs) with unbounded transition and cost rates.
//!
//! The crate works on finite instances: a state grid, per-state action grids,
//! a conservative signed rate kernel, cost rates, Lyapunov weights and a
//! discount factor. On top of that it provides
//!
//! * [`model`] — the CTMDP primitives, kernel validation, numeric checks of
//!   the drift/growth conditions, and level-set truncation;
//! * [`solver`] — monotone value iteration for the Bellman equation,
//!   optimal-policy extraction, Bellman residuals and a dual-LP feasibility
//!   certificate;
//! * [`sim`] — a jump-process sampler for deterministic, randomized and
//!   history-dependent policies, Monte Carlo discounted-cost estimation, and
//!   forward-equation / Dynkin residual diagnostics;
//! * [`queueing`] — a one-channel queueing control example with closed-form
//!   value function and optimal service intensity, usable as an analytic
//!   oracle for everything above.
//!
//! The crate is `no_std`-compatible (with `alloc`); enable the `libm` feature
//! instead of `std` for embedded-style builds. All IO, file formats and the
//! command-line front end live in the companion `ctmdp-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]

#[cfg(all(not(feature = "std"), not(feature = "libm")))]
compile_error!("ctmdp-core needs either the `std` or the `libm` feature for float math");

extern crate alloc;

pub(crate) mod fmath;

pub mod linalg;
pub mod model;
pub mod quad;
pub mod queueing;
pub mod rng;
pub mod sim;
pub mod solver;

pub mod fixtures;
