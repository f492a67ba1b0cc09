//! Partitioned sign-based zeroth-order policy optimization for federated
//! preference-based reinforcement learning.
//!
//! A server splits the policy parameters into `K` blocks, one per agent.
//! Each iteration it broadcasts a single Rademacher direction; every agent
//! perturbs only its own block, asks a panel of human-like evaluators which
//! of the two policies they prefer, and replies with one bit. The server
//! sums the signed masked directions and takes a step.

pub mod env;
pub mod error;
pub mod federate;
pub mod harness;
pub mod params;
pub mod perturb;
pub mod policy;
pub mod preference;
pub mod rng;
pub mod trace;
pub mod verify;

pub use env::{EnvSpec, Target, Trajectory};
pub use error::{Error, Result};
pub use federate::{run, Algorithm, RunConfig, RunTrace, Runner, UpdateMode};
pub use params::{block_sum_norm, sign, MaskVector, ParamVector, Partition, PartitionMode};
pub use perturb::{decode_bits, encode_bits, Perturbation, PerturbationKind};
pub use policy::{Policy, PolicySpec};
pub use preference::{preference_oracle, LinkFunction, PanelSpec};
pub use rng::{RngStream, Role, StreamId, GENERATOR_ID};
