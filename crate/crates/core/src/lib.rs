//! Recurrent networks trained to carry out several leaky integrations at once.
//!
//! The crate bundles the forward dynamics ([`model`]), exact and proxy loss
//! functionals ([`losses`]), gradients and optimizers ([`training`]), the
//! reduced two-dimensional analysis of null-initialised linear training
//! ([`lowrank`]), structural diagnostics of trained networks
//! ([`diagnostics`]), a context-dependent readout task ([`transfer`]) and
//! the experiment runner behind the `integrator-rnn` binary ([`cli`]).

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod losses;
pub mod lowrank;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod training;
pub mod transfer;

pub use error::{Error, Result};
pub use numerics::Matrix;
