//! Adaptive trust-region radius rules for Muon-type normalized optimizers.
//!
//! All methods share the update `x₊ = z − η·u(m)`, where `u(m)` is the
//! linear-minimization-oracle direction of the momentum in the chosen norm
//! geometry. They differ in how the center `z` and the radius `η` are picked:
//!
//! * [`da`]: Distance-Adaptive Muon, radius from the explored trajectory
//!   radius with `1/√(k+1)` decay (smooth non-convex objectives).
//! * [`sc`]: Scale-Calibrated Muon, radius `a_k/L` from a descent
//!   certificate comparing momentum and current gradient.
//! * [`df`]: Distance-Free Muon, recentered ray toward `x_0` and a radius from
//!   a convex one-dimensional majorant regularized by a distance certificate.
//! * [`practical`]: the stochastic Frobenius-proxy variant of the DF rule.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod da;
pub mod df;
pub mod error;
pub mod geometry;
pub mod muon;
pub mod point;
pub mod practical;
pub mod problems;
pub mod sc;
pub mod testkit;
pub mod trace;

pub use error::{Error, Result};
pub use geometry::{Geometry, NormTag, Orthogonalization};
pub use point::{Block, BlockKind, BlockShape, Layout, Point};
pub use problems::{make_problem, ProblemKind, ProblemSpec};
pub use trace::{Algorithm, RunOutput, Trace, TraceRecord};
