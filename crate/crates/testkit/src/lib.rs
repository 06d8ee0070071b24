//! Independent oracles for the test suites.
//!
//! Nothing here reuses the algorithms under test: compatibility is decided by
//! linear feasibility over joint entries, flow inverses are found by damped
//! Newton iteration on a finite-difference Jacobian, and derivatives are
//! checked against central differences.

pub mod affine;
pub mod fd;
pub mod lp;
pub mod numeric_flow;
pub mod pairs;
