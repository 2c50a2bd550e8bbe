//! Commit-protocol message schema and the per-role state machines.
//!
//! Every node is a single-threaded state machine driven by the simulation
//! kernel; state machines communicate only through [`Msg`] values. The same
//! schema serves both the decentralized protocol (co-coordinators, bypass
//! replies, fast/slow paths, recovery) and the layered baseline (votes to a
//! single coordinator after quorum replication).

pub mod client;
pub mod cocoord;
pub mod replica;

use crate::replication::LogEntry;
use crate::time::SimTime;
use crate::topology::{DcId, NodeId, ShardId, Topology};
use crate::txkv::TxnTs;
use crate::types::{AbortReason, CcMode, Decision, Key, Protocol, ReadVersion, TxnId, Value, Version, Vote};

/// Picks the co-coordinator group serving a transaction: the client-local
/// counter modulo the group count, identical on every node.
pub fn route_to_group(tid: TxnId, groups: u32) -> u32 {
    debug_assert!(groups >= 1);
    (tid.counter % groups as u64) as u32
}

#[derive(Debug, Clone)]
pub enum Msg {
    // -------- client-facing --------
    ReadRequest { tid: TxnId, ts: TxnTs, key: Key, lock_read: bool },
    ReadReply { tid: TxnId, key: Key, value: Value, version: ReadVersion },
    /// Client -> correspondent coordinator: announces the participant list
    /// so the final decision maker need not learn it from notices.
    CommitRequest { tid: TxnId, shard_list: Vec<ShardId>, client: NodeId },
    /// Client -> participant leaders: per-shard read/write sets for validation.
    Prepare {
        tid: TxnId,
        ts: TxnTs,
        rset: Vec<(Key, ReadVersion)>,
        wset: Vec<(Key, Value)>,
        shard_list: Vec<ShardId>,
        client: NodeId,
        read_opt: bool,
    },
    /// Client abandons an attempt before commit (a locked read died);
    /// leaders drop any execution-time locks it still holds.
    AbortExecution { tid: TxnId },

    // -------- replication --------
    ReplicationAppend { shard: ShardId, entry: LogEntry, leader_dc: DcId },
    ReplicationAck { shard: ShardId, index: u64, from: DcId },
    /// Replica -> co-located co-coordinator: vote, replication reply, and the
    /// involved shard list. Also used (with `replicated: false`) for the
    /// leader's direct vote to co-coordinators of datacenters that hold no
    /// replica of the shard.
    FollowerNotice {
        tid: TxnId,
        shard: ShardId,
        vote: Vote,
        reason: Option<AbortReason>,
        replicated: bool,
        replica_dc: Option<DcId>,
        shard_list: Vec<ShardId>,
        client: NodeId,
    },
    /// Co-coordinator -> correspondent coordinator: bypass-leader relay of a
    /// replica's replication reply.
    ForwardedReply { tid: TxnId, shard: ShardId, vote: Vote, reason: Option<AbortReason>, replica_dc: DcId },
    /// Leader -> correspondent (slow path) or layered coordinator: vote plus
    /// replication completion, exactly the layered-mode evidence.
    LeaderReport {
        tid: TxnId,
        shard: ShardId,
        vote: Vote,
        reason: Option<AbortReason>,
        replication_complete: bool,
        shard_list: Vec<ShardId>,
        client: NodeId,
    },
    /// Co-coordinator -> co-located participant leaders: conclude concurrency
    /// control early (PreCommit) or abort on a failed vote.
    PreCommitNotify { tid: TxnId, decision: Decision },
    /// Final decision to clients and participant leaders.
    FinalDecision { tid: TxnId, decision: Decision, reason: Option<AbortReason> },
    /// Correspondent -> co-coordinators of the group: make the decision
    /// fault-tolerant (off the commit path).
    DecisionReplicate { tid: TxnId, decision: Decision, reason: Option<AbortReason>, shard_list: Vec<ShardId> },
    DecisionAck { tid: TxnId, from_dc: DcId },
    /// Leader -> followers: apply a decided transaction to follower stores,
    /// with the exact committed version of every written key.
    DecisionApply { tid: TxnId, shard: ShardId, decision: Decision, writes: Vec<(Key, Version, Value)> },

    // -------- failure handling --------
    /// Elected co-coordinator asks its peers whether anyone saw the decision.
    RecoveryQuery { tid: TxnId, from_dc: DcId },
    RecoveryReply { tid: TxnId, decision: Option<(Decision, Option<AbortReason>)>, from_dc: DcId },
    /// Termination protocol: ask every participant leader for vote and
    /// replication state.
    TerminationQuery { tid: TxnId, shard: ShardId, from: NodeId },
    TerminationReply {
        tid: TxnId,
        shard: ShardId,
        vote: Vote,
        reason: Option<AbortReason>,
        replication_complete: bool,
    },
    /// Correspondent pings replicas of a stalled shard to distinguish slow
    /// replication from a lost majority.
    ProbeReplicas { tid: TxnId, shard: ShardId },
    ProbeAck { tid: TxnId, shard: ShardId, from_dc: DcId },
    /// A participant leader stuck without the final decision asks the
    /// co-coordinators; whoever knows it replies with FinalDecision.
    DecisionRequest { tid: TxnId, from: NodeId },
    /// Wound-wait: an older transaction displaced this executing one at a
    /// leader; the client restarts the attempt.
    ExecutionWounded { tid: TxnId },

    // -------- timers --------
    Timer(TimerKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimerKind {
    /// Client wakes up to start its next transaction.
    ClientStart,
    /// A follower read to a possibly-crashed local replica timed out.
    ReadRetry { tid: TxnId, key: Key },
    /// Waiting on the final decision ran out of patience.
    AwaitDecision { tid: TxnId },
    /// End of the window collecting RecoveryReplies.
    RecoveryWindow { tid: TxnId },
    /// End of the window collecting ProbeAcks.
    ProbeWindow { tid: TxnId },
    /// Staged off-path dissemination of a final decision: stages 1..=P send
    /// the decision to one co-coordinator peer each, stage P+1 notifies the
    /// participant leaders.
    Disseminate { tid: TxnId, stage: u8 },
    /// Periodic re-send of termination queries while leaders are unreachable.
    TerminationRetry { tid: TxnId },
    /// A leader waiting on a final decision for too long.
    LeaderAwait { tid: TxnId },
    /// A lock request waiting for too long gets cancelled.
    LockTimeout { tid: TxnId },
    /// A client waiting on a commit outcome for too long re-sends prepares.
    CommitRetry { tid: TxnId },
}

/// Static run parameters shared by every node.
#[derive(Debug, Clone)]
pub struct ProtocolConfig {
    pub protocol: Protocol,
    pub cc: CcMode,
    pub read_opt: bool,
    pub groups: u32,
    pub shard_count: u64,
    /// Patience before suspecting a failure; default 4x the largest one-way
    /// delay in the matrix.
    pub recovery_timeout: SimTime,
    /// Window for collecting recovery replies and probe acks.
    pub response_window: SimTime,
    /// Gap between the decision and the staged off-path notifications,
    /// making partial dissemination on a crash possible, as in a real system
    /// where those sends are asynchronous.
    pub dissemination_step: SimTime,
    /// Retries allowed per transaction chain before it is reported failed.
    pub retry_limit: u32,
    /// Aborted 2PL transactions re-execute with read locks taken at leaders.
    pub second_execution: bool,
}

impl ProtocolConfig {
    pub fn defaults_for(topology: &Topology) -> ProtocolConfig {
        let max_one_way = topology.matrix.max_one_way();
        ProtocolConfig {
            protocol: Protocol::D2pc,
            cc: CcMode::Occ,
            read_opt: true,
            groups: 1,
            shard_count: topology.shards.len() as u64,
            recovery_timeout: max_one_way * 4,
            response_window: max_one_way * 2 + SimTime::from_ms(1.0),
            dissemination_step: SimTime::from_us(10),
            retry_limit: 10,
            second_execution: true,
        }
    }
}

/// Current leader placement per shard; updated by oracle reassignment and
/// consulted whenever a node addresses "the leader of shard s".
#[derive(Debug, Clone)]
pub struct Routing {
    leaders: Vec<DcId>,
}

impl Routing {
    pub fn from_topology(topology: &Topology) -> Routing {
        Routing { leaders: topology.shards.iter().map(|s| s.leader).collect() }
    }

    pub fn leader_dc(&self, shard: ShardId) -> DcId {
        self.leaders[shard.index()]
    }

    pub fn leader_node(&self, shard: ShardId) -> NodeId {
        NodeId::Replica { shard, dc: self.leader_dc(shard) }
    }

    pub fn set_leader(&mut self, shard: ShardId, dc: DcId) {
        self.leaders[shard.index()] = dc;
    }
}

/// The layered coordinator: leader of the lowest-numbered participant shard.
pub fn layered_coordinator(shard_list: &[ShardId]) -> ShardId {
    *shard_list.iter().min().expect("non-empty participant list")
}
