//! Minimum-control polynomial splines with linear-time construction and
//! gradient propagation, constraint-eliminating maps for corridors and
//! durations, a time-integral penalty, quadcopter flatness and an
//! L-BFGS driver tying them together.

// Index loops mirror the math; `!(x > 0.0)` deliberately catches NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod banded;
pub mod elimination;
pub mod error;
pub mod flatness;
pub mod geometry;
pub mod gradcheck;
pub mod lbfgs;
pub mod minco;
pub mod penalty;
pub mod scene;
pub mod solver;

pub use error::{Error, Result};
