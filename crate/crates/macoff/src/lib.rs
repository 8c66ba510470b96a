//! Minimum-energy uplink resource allocation for multi-user computational
//! offloading.
//!
//! A system of `K` single-antenna users shares one access point. Each user
//! holds a task of `B` bits with its own deadline `L` and either computes it
//! locally under dynamic voltage scaling or ships (part of) it uplink. This
//! crate computes the rates, powers, offload fractions, and decode/transmit
//! orders that minimize the total device energy, under two channel models:
//!
//! - **FullMA** — any scheme achieving the full multiple-access capacity
//!   region (superposition coding with ordered successive decoding). For
//!   indivisible tasks the solution is closed form
//!   ([`fullma::complete`]); for divisible tasks a coordinate-descent
//!   search finds a stationary point ([`fullma::partial`]).
//! - **TDMA** — users transmit in disjoint intervals. Both task models
//!   reduce to small convex programs solved by a log-barrier Newton method
//!   ([`tdma::complete`], [`tdma::partial`]).
//!
//! Offloading-set selection for indivisible tasks (greedy search with
//! pruning, exhaustive enumeration, rounding of the divisible solution)
//! lives in [`binary`]. Brute-force verifiers (LP vertex enumeration over
//! the power polytope, dense grid searches, constraint tightness audits)
//! live in [`oracle`] and are orchestrated by [`audit`]. The Monte-Carlo
//! experiment harness is in [`sim`], and [`cli`] backs the `macoff` binary.
//!
//! The `examples/` directory demonstrates each capability end to end; start
//! with `complete_fullma`.

pub mod audit;
pub mod binary;
pub mod cli;
pub mod error;
pub mod fullma;
pub mod model;
pub mod oracle;
pub mod sim;
pub mod tdma;

pub use error::{Result, SolveError};
pub use model::{
    effective_latencies, generate_scenario, local_energy_dvs, Allocation, CellConfig,
    EffectiveLatencies, EnergyReport, Scenario, ScenarioConfig, SystemParams, TaskTemplate,
    UserAllocation, UserEnergy, UserTask,
};
