//! Deterministic discrete-event simulator and protocol library for
//! geo-distributed transaction commit.
//!
//! The crate models a geo-replicated, sharded key-value database committing
//! transactions either through a decentralized two-phase commit (per-region
//! co-coordinators making PreCommit decisions, bypass-leader replication
//! replies, fast and slow commit paths, failure recovery) or through the
//! classic layered baseline (2PC stacked on leader-based quorum replication).
//! Around the protocols sit workload generators, failure injection, an
//! analytic latency calculator, and history oracles that check
//! serializability, atomicity, and recoverability of every run.

pub mod analytic;
pub mod cluster;
pub mod config;
pub mod error;
pub mod metrics;
pub mod oracle;
pub mod protocol;
pub mod replication;
pub mod simnet;
pub mod time;
pub mod topology;
pub mod trace;
pub mod txkv;
pub mod types;
pub mod workload;

pub use time::SimTime;
pub use topology::{DcId, LatencyMatrix, NodeId, ShardId, Topology};
pub use types::{CcMode, Decision, Protocol, TxnId, Vote};
