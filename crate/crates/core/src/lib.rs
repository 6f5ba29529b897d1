//! Temporally fair multi-user scheduling with threshold-based strategies.
//!
//! The crate simulates a single cell in which one virtual user (a single
//! user or a superposed pair) is scheduled per slot. Schedulers pick the
//! virtual user maximizing utility plus the sum of member thresholds; the
//! thresholds are learned online by a Robbins-Monro iteration and compared
//! against independently computed references to measure convergence rates.

// Validation uses `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod epoch;
pub mod error;
pub mod experiments;
pub mod learning;
pub mod oracle;
pub mod rng;
pub mod scheduler;
pub mod setting;
pub mod stats;

pub use error::{Error, Result};
