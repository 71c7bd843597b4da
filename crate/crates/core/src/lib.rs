//! Simulation library for the coupled tangent-space chains associated with
//! sample Frechet means on constant-curvature manifolds, their limiting
//! diffusion, and the statistical verification of the convergence claims.
//!
//! Module map:
//! - [`geometry`]: closed-form primitives (distance, exp/log, transport,
//!   the squared-distance Hessian operator) on R^d, S^d, H^d;
//! - [`sampling`]: seedable population models with exact moments;
//! - [`frechet`]: the Frechet-mean solver and limit parameters;
//! - [`chains`]: the coupled auxiliary / rescaled-mean chains;
//! - [`limitlaw`]: the limiting Brownian diffusion;
//! - [`verify`]: statistical pass/fail machinery;
//! - [`config`] / [`runner`]: the batch experiment CLI internals.

// `!(x > 0.0)` style comparisons are used on purpose: they reject NaN
// along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chains;
pub mod config;
pub mod error;
pub mod frechet;
pub mod geometry;
pub mod limitlaw;
pub mod runner;
pub mod sampling;
pub mod verify;

pub use error::{Error, Result};
