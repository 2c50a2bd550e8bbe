//! Per-shard replicated log with leader-based quorum tracking.
//!
//! Stands in for a Multi-Paxos/Raft log: the leader appends, fans the entry
//! out to every replica (itself included), and an entry is quorum-committed
//! once F+1 of the 2F+1 replicas hold it, the leader's own instantaneous
//! append counting toward the quorum. Leader election is oracle-driven
//! (`reassign_leader` failure-schedule events); a new leader starts from the
//! quorum-committed prefix of the old one. Entries are durable: they survive
//! their replica's crash.

use crate::topology::{DcId, ShardId};
use crate::types::{Key, ReadVersion, TxnId, Value, Vote};
use std::collections::{BTreeMap, BTreeSet};

/// Replicated once per (shard, transaction); immutable once appended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub index: u64,
    pub tid: TxnId,
    pub rset: Vec<(Key, ReadVersion)>,
    pub wset: Vec<(Key, Value)>,
    pub vote: Vote,
    pub shard_list: Vec<ShardId>,
    /// Datacenter of the issuing client; tells the slow path where the
    /// correspondent coordinator lives.
    pub client_dc: DcId,
    pub client: u32,
}

/// Durable per-replica log. Indexes are gap-free; out-of-order deliveries
/// are buffered until the gap fills.
#[derive(Debug, Default)]
pub struct ReplicaLog {
    entries: Vec<LogEntry>,
    stashed: BTreeMap<u64, LogEntry>,
}

impl ReplicaLog {
    pub fn len(&self) -> u64 {
        self.entries.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: u64) -> Option<&LogEntry> {
        self.entries.get(index as usize)
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn find(&self, tid: TxnId) -> Option<&LogEntry> {
        self.entries.iter().find(|e| e.tid == tid)
    }

    pub fn next_index(&self) -> u64 {
        self.entries.len() as u64
    }

    /// Appends in index order. Returns the entries that became appendable
    /// now (the new one plus any stashed successors); duplicates of already
    /// applied indexes return an empty list.
    pub fn append(&mut self, entry: LogEntry) -> Vec<u64> {
        if entry.index < self.next_index() {
            debug_assert_eq!(self.entries[entry.index as usize], entry, "log entries are immutable");
            return Vec::new();
        }
        if entry.index > self.next_index() {
            self.stashed.insert(entry.index, entry);
            return Vec::new();
        }
        let mut applied = vec![entry.index];
        self.entries.push(entry);
        while let Some(e) = self.stashed.remove(&self.next_index()) {
            applied.push(e.index);
            self.entries.push(e);
        }
        applied
    }
}

/// Leader-side ack bookkeeping toward F+1 quorums.
#[derive(Debug, Default)]
pub struct QuorumState {
    acks: BTreeMap<u64, BTreeSet<DcId>>,
    complete: BTreeSet<u64>,
}

impl QuorumState {
    /// Records an ack; returns true when this ack completes the quorum.
    pub fn record_ack(&mut self, index: u64, from: DcId, quorum: usize) -> bool {
        let acks = self.acks.entry(index).or_default();
        acks.insert(from);
        if acks.len() >= quorum && !self.complete.contains(&index) {
            self.complete.insert(index);
            return true;
        }
        false
    }

    pub fn is_quorum(&self, index: u64) -> bool {
        self.complete.contains(&index)
    }

    pub fn ack_count(&self, index: u64) -> usize {
        self.acks.get(&index).map_or(0, |s| s.len())
    }
}
