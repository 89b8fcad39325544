//! Frequency-domain stability workbench for grid-tied voltage-source
//! converters with a PLL.
//!
//! The small-signal model is expressed as coupled positive/negative sequence
//! networks in the PLL frame. Stability follows from the Argument Principle on
//! the augmented loop impedance, from characteristic loci of the minor loop
//! gain, or from the generalized Schur-complement loop. A nonlinear averaged
//! time-domain simulation provides an independent check.

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod model;
pub mod sequence;
pub mod sim;
pub mod stability;
pub mod tf;

pub use error::{Error, Result};
