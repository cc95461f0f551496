//! Pessimistic Q-ensemble laboratory.
//!
//! The crate is organised bottom-up:
//!
//! - [`dataset`]: the random Gaussian MDP and the Continuous Chain MDP, plus
//!   offline dataset generation and CSV persistence.
//! - [`kernel`]: closed-form lower-confidence-bound estimates for linear
//!   (kernel-regime) ensembles under independent and shared targets, the
//!   iterative linearized-FQE oracle and the seed sweep that exhibits
//!   optimistic "pessimism" under shared targets.
//! - [`nnets`]: a small hand-differentiated MLP stack, Adam, and the
//!   efficient-ensemble architectures (multi-head, MIMO, batch ensembles).
//! - [`fqe`]: fitted Q-evaluation with the five target rules and the
//!   uncertainty curves they produce on the chain MDP.
//! - [`msg`]: the MSG actor-critic (independent targets, EMA target
//!   networks, support regularizer, LCB policy ascent).
//!
//! Data-parallel loops (seed sweeps, ensemble members) go through [`par`],
//! which uses rayon when the `parallel` feature is enabled and runs
//! sequentially otherwise. Results are identical either way.

// Validation negates comparisons so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod fqe;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod msg;
pub mod nnets;
pub mod par;
pub mod rng;

pub use error::{Error, Result};
