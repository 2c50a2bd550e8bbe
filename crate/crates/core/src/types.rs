//! Identifiers and small value types shared across the store, replication,
//! and protocol layers.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Globally unique transaction identity: the issuing client plus that
/// client's monotone transaction counter. Every attempt (including retries)
/// gets a fresh counter value; counters are never reused.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
pub struct TxnId {
    pub client: u32,
    pub counter: u64,
}

impl TxnId {
    pub fn new(client: u32, counter: u64) -> TxnId {
        TxnId { client, counter }
    }
}

impl fmt::Display for TxnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}.{}", self.client, self.counter)
    }
}

/// Keys are dense integers; a key belongs to shard `key % shard_count`.
pub type Key = u64;

pub type Value = u64;

/// Per-key committed version counter, starting at 0 for the absent value.
pub type Version = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Vote {
    Commit,
    Abort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Commit,
    Abort,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Decision::Commit => write!(f, "commit"),
            Decision::Abort => write!(f, "abort"),
        }
    }
}

/// What a read observed: either a committed version of the key, or the
/// buffered write of a transaction still sitting in the key's precommit list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReadVersion {
    Committed(Version),
    Pending(TxnId),
}

/// Why a shard voted Abort or a transaction was finally aborted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AbortReason {
    /// A read version no longer matches the current state of the key.
    StaleRead,
    /// Write-write conflict with a concurrently validating transaction.
    WriteConflict,
    /// Wound-wait: an older transaction claimed a lock this one held or
    /// awaited before it could vote.
    LockConflict,
    /// A precommitted transaction this one read from was aborted.
    Cascade,
    /// A shard could not assemble a replication quorum.
    ReplicationFailure,
}

impl fmt::Display for AbortReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AbortReason::StaleRead => "stale-read",
            AbortReason::WriteConflict => "write-conflict",
            AbortReason::LockConflict => "lock-conflict",
            AbortReason::Cascade => "cascade",
            AbortReason::ReplicationFailure => "replication-failure",
        };
        write!(f, "{s}")
    }
}

/// Concurrency-control mode of the per-shard store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CcMode {
    #[serde(rename = "2pl")]
    TwoPl,
    Occ,
}

/// Commit protocol under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    D2pc,
    Layered,
}
