//! Interacting mediator-outcome model for dynamic causal mediation.
//!
//! The mediator is a marked temporal point process whose time intensity is a
//! squared sum of a constant and two sparse-variational GP terms (one driven by
//! past mediator events, one by past outcome measurements). The outcome is a
//! conditional GP: a per-patient baseline plus a sum of mark-scaled, causally
//! masked responses to past events. Natural direct, indirect and total effect
//! trajectories of a one-shot intervention are estimated by rolling out the
//! three path-specific counterfactual regimes with shared random numbers.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the command-line
//! driver and parallel execution live in the `dynmed-workbench` crate.

#![cfg_attr(not(test), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod causal;
pub mod data;
pub mod error;
pub mod gp;
pub mod kernels;
pub mod linalg;
pub mod mediator;
pub mod outcome;
pub mod quadrature;
pub mod sampler;

pub use crate::data::{EventSequence, MediatorEvent, OutcomePoint, OutcomeSeries, Regime};
pub use crate::error::{Error, Result};
pub use crate::kernels::KernelSpec;
