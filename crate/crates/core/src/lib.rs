//! Replica-symmetric analysis of Bayes-optimal dictionary learning.
//!
//! A planted `M x N` dictionary with unit-norm columns and an `N x P`
//! Bernoulli-Gaussian sparse matrix generate the samples
//! `Y = D X / sqrt(N)`. In the limit `N -> inf` with `alpha = M / N` and
//! `gamma = P / N` fixed, the Bayes-optimal reconstruction error is governed
//! by a handful of order parameters that solve a saddle-point problem. This
//! crate solves those equations, evaluates the free entropy of each branch,
//! and locates the critical sample ratios.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boundaries;
pub mod channel;
pub mod error;
pub mod export;
pub mod free_entropy;
pub mod general;
pub mod oracle;
pub mod params;
pub mod quadrature;
pub mod solver;

pub use channel::{denoiser, double_average, xi_parts, ChannelParams, ClosedForm, Denoiser};
pub use error::{Error, Result};
pub use free_entropy::{dominant_branch, phi_failure, phi_general, phi_success, PhiValue};
pub use oracle::{denoiser_oracle, NumericalOracle};
pub use params::{Branch, ConjugateParams, FixedPoint, ModelParams, OrderParams, SuccessSusceptibilities};
pub use quadrature::QuadratureSpec;
pub use solver::{nishimori_update, solve_all_branches, solve_branch, success_susceptibilities, SolveOptions};
