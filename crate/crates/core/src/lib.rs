//! Simulation core for recourse-driven model drift under a top-k resource
//! constraint.
//!
//! Each round samples users from a mix of the original population and the
//! previous round's responders, lets rejected users take recourse actions
//! against the deployed model, labels at most `k` users as accepted, and
//! retrains the model on those labels. The crate is `no_std` and needs only
//! `alloc`; file formats, configuration files and the CLI live in the
//! companion `recourse-drift` crate.

#![no_std]
// `!(x > 0.0)` is used on purpose so that NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod labeling;
pub mod metrics;
pub mod models;
pub mod recourse;
pub mod rng;
pub mod simulation;
pub mod theory;
pub mod update;

pub use error::{Error, Result};
