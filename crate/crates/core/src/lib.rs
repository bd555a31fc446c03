//! Simulator for DRL-driven vehicle selection in asynchronous federated
//! learning over vehicular edge networks.

// Validation is written as `!(x > 0.0)` so NaN is rejected along with
// out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod afl;
pub mod channel;
pub mod config;
pub mod data;
pub mod ddpg;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod scenario;
pub mod world;

pub use error::{Result, SimError};
