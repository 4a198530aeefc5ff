//! Shapley-Owen interaction effects of the random factors of
//! policy-augmented Bayesian network (PABN) process models.
//!
//! The crate is `no_std` and needs only `alloc`. IO, configuration and the
//! command-line driver live in the `sopabn` crate.

#![no_std]

extern crate alloc;

pub mod allocation;
pub mod error;
pub mod estimators;
pub mod feedback;
pub mod linalg;
pub mod linear;
pub mod oracle;
pub mod pabn;
pub mod sampling;
pub mod sets;

pub use error::{Error, Result};
pub use pabn::{Dims, InputIndex, ModelFamily, OutputSelector, PabnModel, ResidualLaw, Trajectory};
pub use sets::{Pair, PairTable, Permutation, SubsetKey};
