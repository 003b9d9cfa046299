//! Heat-kernel numerics for kinetic diffusions
//!
//! `dX1 = F1(t,X) dt + σ(t,X) dW`, `dX2 = F2(t,X) dt`:
//! anisotropic Gaussian proxies, parametrix series for the transition
//! density, control synthesis, mollified flows and Monte Carlo audits.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod coefficients;
pub mod control;
pub mod error;
pub mod exec;
pub mod flow;
pub mod frozen;
pub mod geometry;
pub mod linalg;
pub mod montecarlo;
pub mod ode;
pub mod parametrix;
pub mod quadrature;

pub use error::{Error, Result};
pub use geometry::PhasePoint;
