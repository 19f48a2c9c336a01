//! Analysis and simulation toolkit for sampling from strongly log-concave
//! distributions with discretized Langevin dynamics.
//!
//! The pieces fit together as follows:
//!
//! - [`targets`]: potentials `f` with gradient oracles and the constants
//!   `(m, L, L1)` everything downstream consumes.
//! - [`state_space`]: the SDEs in compact Kronecker ("hat") form, with
//!   algebraic checkers certifying the invariant density.
//! - [`contractivity`]: continuous and per-step contraction rates from
//!   small generalized eigenvalue problems, rate tables, eigencurves, and
//!   the optimal-metric search.
//! - [`noise`] and [`integrators`]: exactly distributed noise functionals
//!   and the EM/EE/UBU/BUB steps built on them, including synchronous
//!   coupling and shared-path strong-order runs.
//! - [`wasserstein`]: exact Gaussian `W_2`/`W_P`, the discrete Lyapunov
//!   route to each scheme's invariant law on quadratic targets, and exact
//!   empirical distances.
//! - [`bounds`]: local-error constants, the contraction-plus-bias mixing
//!   bound, and `(h, n)` planning to a target accuracy.

// Validation uses `!(x > 0)`-style guards on purpose: NaN must fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod contractivity;
pub mod error;
pub mod integrators;
pub mod kernels;
pub mod linalg;
pub mod noise;
pub mod state_space;
pub mod targets;
pub mod wasserstein;

pub use error::{Error, Result};
