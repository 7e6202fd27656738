//! Numerical engine for mean-field principal–agent contracting with accident jumps.
//!
//! A principal (an energy producer) pays a crowd of identical agents (consumers)
//! a terminal compensation ξ. Each agent controls the drift of a jump-diffusion
//! state and the intensity of unit downward "accident" jumps. The crowd's law
//! feeds back into the dynamics through its mean and variance.
//!
//! ```text
//! dX_t = (α⁰_t + k₁ E[X_t]) dt + σ dW_t − dJ_t,   intensity(J) = e^{−k₂ α¹_t} Var(X_t)
//! ```
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: parameters, validation, the affine cost split `f`, `g`, and a
//!   generic coefficient record.
//! - [`hamiltonian`]: the agent's pointwise payoff rate, its supremum and the
//!   best response (closed form and grid search).
//! - [`value_ode`]: the principal's value coefficients `h₀, h₁, h₂`.
//! - [`incentives`]: the optimal contract exposures `(Y₀, Z*, U*)` and the
//!   induced agent efforts.
//! - [`moments`]: the deterministic mean/variance flow of the equilibrium law.
//! - [`simulator`]: Monte Carlo of the coupled `(X, Y)` system and the Picard
//!   loop for the mean-field fixed point.
//! - [`evaluator`]: agent and principal values, incentive-compatibility and
//!   martingale diagnostics.
//! - [`generic_mkv`]: a closed-form-free engine for arbitrary [`model::GenericModel`]s.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod evaluator;
pub mod generic_mkv;
pub mod hamiltonian;
pub mod incentives;
pub mod model;
pub mod moments;
pub mod quadrature;
pub mod rng;
pub mod simulator;
pub mod stats;
pub mod value_ode;

pub use error::{Error, InvalidParameter, Result};
pub use model::{GenericModel, LawMoments, MarketParams};
