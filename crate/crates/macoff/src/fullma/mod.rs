//! Solvers for schemes that exploit the full multiple-access channel.

pub mod complete;
pub mod partial;
