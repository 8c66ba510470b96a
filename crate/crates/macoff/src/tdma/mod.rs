//! Solvers for the time-division multiple-access scheme.

pub(crate) mod barrier;
pub mod complete;
pub mod partial;
