//! Numerical laboratory for linear parabolic systems with dynamic boundary
//! conditions on a disk.
//!
//! The unknown is a coupled pair `(y, y_Γ)`: a bulk field on the disk and a
//! surface field on its boundary circle, tied together by the trace. The
//! crate provides
//!
//! - a polar finite-volume mesh with a discrete tangential calculus on the
//!   boundary ([`geometry`]),
//! - coefficient sets with ellipticity certification ([`coefficients`]),
//! - the assembled bulk-surface operator, its bilinear form and the norms
//!   used throughout ([`operators`]),
//! - implicit time integration ([`solver`]),
//! - Carleman weight functions and the evaluation of weighted energies on
//!   computed trajectories ([`carleman`]),
//! - the inverse source problem: admissible sources, observations,
//!   Tikhonov reconstruction and stability ratios ([`inverse`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod carleman;
pub mod coefficients;
pub mod convergence;
pub mod error;
pub mod geometry;
pub mod inverse;
pub mod io;
pub mod operators;
pub mod region;
pub mod solver;
pub mod sparse;

pub use error::{Error, Result};
