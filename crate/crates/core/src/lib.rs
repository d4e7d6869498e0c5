//! Global optimization of the polar AC optimal power flow problem.
//!
//! The crate is organised bottom-up:
//!
//! * [`netmodel`] parses MATPOWER case files into a per-unit [`Network`].
//! * [`model_ir`] is a small solver-agnostic representation of mixed-binary
//!   convex programs (linear rows, convex quadratic rows, rotated cones).
//! * [`envelopes`] and [`piecewise`] emit convex and piecewise relaxations of
//!   the quadratic, trigonometric and trilinear terms of the power-flow
//!   equations into a model.
//! * [`qcbuilder`] assembles the QC relaxation and its piecewise counterpart.
//! * [`solver`] solves continuous convex models and runs branch-and-bound over
//!   partition binaries.
//! * [`localsolver`] is a primal-dual interior point method for the AC problem
//!   itself and produces feasible dispatches (upper bounds).
//! * [`amp`] ties everything together: bound tightening, partition selection
//!   and the adaptive partitioning loop.

pub mod amp;
pub mod envelopes;
mod error;
pub mod localsolver;
pub mod model_ir;
pub mod netmodel;
pub mod piecewise;
pub mod qcbuilder;
pub mod solver;

pub use error::{Error, Result};
pub use netmodel::{Branch, Bus, BusType, Generator, Network};
