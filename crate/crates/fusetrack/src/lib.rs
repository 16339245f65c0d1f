//! Lidar/Radar obstacle tracking toolkit.
//!
//! The crate provides, as libraries and behind the `fusetrack` CLI:
//! - a linear Kalman core with chi-square validation gating ([`filtering`]),
//! - constant-velocity propagation with ego-motion compensation ([`motion`]),
//! - Mahalanobis association solved by the Hungarian algorithm
//!   ([`association`]),
//! - the fused-object-list tracker over asynchronous sensor frames
//!   ([`tracker`]),
//! - RTK-based ground-truth recomposition and MSE evaluation
//!   ([`truth_eval`]),
//! - a deterministic two-vehicle scenario simulator ([`sim`]), JSONL log
//!   formats ([`jsonl`]), a step-latency harness ([`latency`]) and seeded
//!   evaluation sweeps ([`sweep`]).

pub mod association;
pub mod error;
pub mod filtering;
pub mod jsonl;
pub mod latency;
pub mod motion;
pub mod sim;
pub mod sweep;
pub mod tracker;
pub mod truth_eval;

pub use error::{Error, Result};
