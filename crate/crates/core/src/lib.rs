//! Load balancing in large, sparsely connected queueing networks with
//! synchronization delay.
//!
//! Schedulers sit on the nodes of a bounded-degree graph and route each
//! incoming job either to their own queue or to a neighbour's. Queue state
//! is only refreshed every `Δt` time units, so routing decisions are made on
//! stale information. The crate provides:
//!
//! - [`topology`]: cycle, cube-connected cycles, torus, configuration model
//!   and Bethe lattice graphs
//! - [`traffic`]: the two-level Markov-modulated arrival regime
//! - [`kernel`]: exact single-queue epoch laws and expected drops
//! - [`simulator`]: a Gillespie engine for the whole finite system
//! - [`policies`]: JSQ, RND, OWN, SED and learned offload policies
//! - [`mfcenv`]: the system as a single-agent mean-field control MDP
//! - [`trainer`]: PPO and cross-entropy training of offload policies
//! - [`harness`]: evaluation with confidence intervals, sweeps, rankings

pub mod error;
pub mod exec;
pub mod harness;
pub mod kernel;
pub mod mfcenv;
pub mod nn;
pub mod policies;
pub mod seed;
pub mod simulator;
pub mod topology;
pub mod trainer;
pub mod traffic;

pub use error::{Error, Result};
pub use exec::Execution;
pub use policies::{PolicyHandle, PolicySpec};
pub use simulator::{EpisodeResult, SystemParams};
pub use topology::{Topology, TopologySpec};
