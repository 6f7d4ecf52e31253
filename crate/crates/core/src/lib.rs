//! Numerical toolkit for steering ensembles of points with control-linear
//! systems `ẋ = Σ f_j(x) u_j(t)` on ℝⁿ.
//!
//! * [`liealg`]: fields with exact jets, iterated Lie brackets.
//! * [`flow`]: RK4 flows, flow distances, the variational formula.
//! * [`ensemble`]: parameterized ensembles and diffeotopies.
//! * [`approximator`]: Hermite machinery and extended controls.
//! * [`oscillate`]: fast-oscillating realization of bracket channels.
//! * [`rank`]: bracket-generating rank test for finite ensembles.
//! * [`steering`]: the end-to-end pipeline with error accounting.

// `!(x > 0.0)` style guards are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod approximator;
pub mod ensemble;
pub mod error;
pub mod flow;
pub mod liealg;
pub mod oscillate;
pub mod rank;
pub mod steering;

pub use error::{Error, ErrorClass, Result};
