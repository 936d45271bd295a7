//! Time-incremental minimizing-movement solver for finite-strain
//! viscoplasticity, with numerical certificates for the energy-dissipation
//! inequality and balance, convex-duality identities, and stress control.

// `!(x > 0.0)` deliberately rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod constitutive;
pub mod diagnostics;
pub mod discretization;
pub mod error;
pub mod gradient_system;
pub mod io;
pub mod minimizing_movements;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
