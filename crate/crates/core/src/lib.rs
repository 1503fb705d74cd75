//! Safe exploration in tabular MDPs with analogy-based confidence intervals.
//!
//! The crate is organized bottom-up:
//!
//! - [`mdp`]: tabular MDPs, state-action sets, closed/communicating checks,
//!   masked value iteration.
//! - [`oracle`]: ground truth (true safe set, safe-optimal Q) and brute-force
//!   checkers for small instances.
//! - [`confidence`]: counts, L1 widths, analogy transfer, candidate sets.
//! - [`plan`]: optimistic value iteration, planning rewards, occupancy.
//! - [`safe_set`]: certified safe-set expansion.
//! - [`frontier`]: goal planning and the choice of pairs to explore.
//! - [`agents`]: the safe explorer and its baselines.
//! - [`envs`]: the grid world and the platformer.
//! - [`harness`]: seeded experiments, metrics, CSV output.
//! - [`verify`]: randomized property suites.

pub mod agents;
pub mod confidence;
pub mod envs;
pub mod error;
pub mod frontier;
pub mod harness;
pub mod mdp;
pub mod oracle;
pub mod plan;
pub mod safe_set;
pub mod verify;

pub use error::{Error, Result};
pub use mdp::{ActionId, Mdp, Pair, Policy, QTable, StateActionSet, StateId, Value};
