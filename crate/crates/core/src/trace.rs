//! Run traces.
//!
//! A trace is the ordered record of everything observable that happened in a
//! run: kernel events (deliveries, drops, crashes) and protocol events
//! (prepares, votes, dependencies, decisions, version installs). Traces feed
//! the history oracles and the determinism checks, and can be dumped as
//! line-delimited JSON for debugging.

use crate::time::SimTime;
use crate::topology::{DcId, NodeId, ShardId};
use crate::types::{AbortReason, Decision, Key, ReadVersion, TxnId, Version, Vote};
use serde::{Deserialize, Serialize};

/// How a final decision was reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecisionPath {
    /// Bypass-leader replies gathered by the correspondent coordinator.
    Fast,
    /// Leader quorum reports (also the only path in layered mode).
    Slow,
    /// Adopted from a surviving co-coordinator after a failure.
    RecoveredDecision,
    /// Recomputed from participant votes by the termination protocol.
    Termination,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceEvent {
    Delivered { at: SimTime, from: NodeId, to: NodeId, msg: String },
    Dropped { at: SimTime, from: NodeId, to: NodeId, msg: String },
    Crashed { at: SimTime, node: NodeId },
    Recovered { at: SimTime, node: NodeId },
    LeaderReassigned { at: SimTime, shard: ShardId, new_leader: DcId },
    PrepareReceived { at: SimTime, shard: ShardId, tid: TxnId },
    VoteRecorded { at: SimTime, shard: ShardId, tid: TxnId, vote: Vote, withheld: bool },
    /// A read observed the buffered write of a precommitted transaction and a
    /// wr dependency `writer -> reader` was recorded on this shard.
    WrDependency { at: SimTime, shard: ShardId, reader: TxnId, writer: TxnId, key: Key },
    ReadServed { at: SimTime, shard: ShardId, tid: TxnId, key: Key, version: ReadVersion, follower: bool },
    PreCommitApplied { at: SimTime, shard: ShardId, tid: TxnId },
    /// Concurrency-control conclusion window at one shard leader.
    CcpClosed { shard: ShardId, dc: DcId, tid: TxnId, start: SimTime, end: SimTime },
    DecisionMade { at: SimTime, tid: TxnId, decision: Decision, by: NodeId, path: DecisionPath },
    DecisionApplied { at: SimTime, shard: ShardId, tid: TxnId, decision: Decision },
    VersionInstalled { at: SimTime, shard: ShardId, key: Key, version: Version, tid: TxnId },
    CascadeAbort { at: SimTime, shard: ShardId, tid: TxnId },
    TxnOutcome {
        at: SimTime,
        tid: TxnId,
        client: u32,
        decision: Decision,
        /// Commit-phase latency observed by the client, this attempt.
        latency: SimTime,
        retries: u32,
        participants: Vec<ShardId>,
        abort_reason: Option<AbortReason>,
    },
    /// A transaction chain gave up after exhausting its retry budget.
    TxnFailed { at: SimTime, client: u32, last_tid: TxnId, retries: u32 },
}

impl TraceEvent {
    pub fn at(&self) -> SimTime {
        match self {
            TraceEvent::Delivered { at, .. }
            | TraceEvent::Dropped { at, .. }
            | TraceEvent::Crashed { at, .. }
            | TraceEvent::Recovered { at, .. }
            | TraceEvent::LeaderReassigned { at, .. }
            | TraceEvent::PrepareReceived { at, .. }
            | TraceEvent::VoteRecorded { at, .. }
            | TraceEvent::WrDependency { at, .. }
            | TraceEvent::ReadServed { at, .. }
            | TraceEvent::PreCommitApplied { at, .. }
            | TraceEvent::DecisionMade { at, .. }
            | TraceEvent::DecisionApplied { at, .. }
            | TraceEvent::VersionInstalled { at, .. }
            | TraceEvent::CascadeAbort { at, .. }
            | TraceEvent::TxnOutcome { at, .. }
            | TraceEvent::TxnFailed { at, .. } => *at,
            TraceEvent::CcpClosed { end, .. } => *end,
        }
    }
}

/// Append-only event sink. Message-level events are opt-in because they
/// dominate trace volume on large runs.
#[derive(Debug, Default)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
    pub record_messages: bool,
}

impl Trace {
    pub fn new(record_messages: bool) -> Trace {
        Trace { events: Vec::new(), record_messages }
    }

    pub fn push(&mut self, ev: TraceEvent) {
        self.events.push(ev);
    }

    pub fn push_message(&mut self, ev: TraceEvent) {
        if self.record_messages {
            self.events.push(ev);
        }
    }

    /// Serializes every event as one JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for ev in &self.events {
            out.push_str(&serde_json::to_string(ev).expect("trace event serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Trace, serde_json::Error> {
        let mut events = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            events.push(serde_json::from_str(line)?);
        }
        Ok(Trace { events, record_messages: false })
    }
}
