//! Post-encroachment-time conflict detection from vehicle bounding boxes,
//! signal-phase features, and a random-parameter ordered logit for the
//! resulting conflict-severity levels.

// `!(x > 0.0)` style guards are used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod conflicts;
pub mod error;
pub mod features;
pub mod geometry;
pub mod oracle;
pub mod rplogit;
pub mod signals;
pub mod synthetic;
pub mod trajectory;

pub use error::{Error, Result};
