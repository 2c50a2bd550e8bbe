//! Shard replica state machine.
//!
//! A replica hosts one shard's store and log. The leader runs concurrency
//! control, replicates log entries (with vote and shard list) to every
//! replica including itself, sends its vote directly to co-coordinators of
//! datacenters holding no replica, reports quorum completion on the slow
//! path, and applies final decisions. Followers append in order, ack the
//! leader, and notify their co-located co-coordinator of vote, replication
//! reply, and shard list — the bypass-leader feed.
//!
//! In layered mode the leader of the lowest-numbered participant shard also
//! plays the coordinator: it collects post-quorum votes and broadcasts the
//! decision; no co-coordinators exist at all.

use crate::protocol::{layered_coordinator, route_to_group, Msg, ProtocolConfig, Routing, TimerKind};
use crate::replication::{LogEntry, QuorumState, ReplicaLog};
use crate::simnet::Kernel;
use crate::topology::{DcId, NodeId, ShardId, Topology};
use crate::trace::{DecisionPath, TraceEvent};
use crate::txkv::{PrepareOutcome, ReadOutcome, StoreEvent, TxnStore, TxnTs};
use crate::types::{AbortReason, CcMode, Decision, Key, Protocol, TxnId, Value, Vote};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

/// Leader-side bookkeeping for a transaction between Prepare and decision.
#[derive(Debug)]
struct PendingTxn {
    rset: Vec<(Key, crate::types::ReadVersion)>,
    wset: Vec<(Key, Value)>,
    shard_list: Vec<ShardId>,
    client: NodeId,
    vote: Option<(Vote, Option<AbortReason>)>,
    entry_index: Option<u64>,
}

/// Vote collection when this leader coordinates a layered commit.
#[derive(Debug, Default)]
struct LayeredCoord {
    shard_list: Vec<ShardId>,
    client: Option<NodeId>,
    votes: BTreeMap<ShardId, (Vote, Option<AbortReason>)>,
    decided: bool,
}

pub struct ReplicaNode {
    pub shard: ShardId,
    pub dc: DcId,
    me: NodeId,
    pub is_leader: bool,
    cfg: ProtocolConfig,
    topology: Arc<Topology>,
    store: TxnStore,
    log: ReplicaLog,
    quorum: QuorumState,
    pending: BTreeMap<TxnId, PendingTxn>,
    decided: BTreeMap<TxnId, Decision>,
    /// Follower notice is sent once per transaction.
    noticed: BTreeSet<TxnId>,
    /// Leader datacenters already acked per index; a re-replication from a
    /// newly assigned leader earns a fresh ack, duplicates from the same
    /// leader stay silent.
    acked: BTreeMap<u64, BTreeSet<DcId>>,
    layered: BTreeMap<TxnId, LayeredCoord>,
    waiting_reads: BTreeMap<(TxnId, Key), NodeId>,
    /// Client of each transaction that read here; wound notifications need it.
    read_clients: BTreeMap<TxnId, NodeId>,
    term_waiters: BTreeMap<TxnId, Vec<NodeId>>,
}

impl ReplicaNode {
    pub fn new(
        shard: ShardId,
        dc: DcId,
        is_leader: bool,
        cfg: ProtocolConfig,
        topology: Arc<Topology>,
    ) -> ReplicaNode {
        let store = TxnStore::new(shard, cfg.shard_count, cfg.cc);
        ReplicaNode {
            shard,
            dc,
            me: NodeId::Replica { shard, dc },
            is_leader,
            cfg,
            topology,
            store,
            log: ReplicaLog::default(),
            quorum: QuorumState::default(),
            pending: BTreeMap::new(),
            decided: BTreeMap::new(),
            noticed: BTreeSet::new(),
            acked: BTreeMap::new(),
            layered: BTreeMap::new(),
            waiting_reads: BTreeMap::new(),
            read_clients: BTreeMap::new(),
            term_waiters: BTreeMap::new(),
        }
    }

    pub fn store(&self) -> &TxnStore {
        &self.store
    }

    pub fn log(&self) -> &ReplicaLog {
        &self.log
    }

    /// Crash: concurrency-control state, pending coordination, and quorum
    /// bookkeeping are volatile; the log (with its votes) and committed
    /// versions are durable.
    pub fn wipe_volatile(&mut self) {
        let mut fresh = TxnStore::new(self.shard, self.cfg.shard_count, self.cfg.cc);
        fresh.adopt_committed_state(&self.store);
        self.store = fresh;
        self.quorum = QuorumState::default();
        self.pending.clear();
        self.decided.clear();
        self.acked.clear();
        self.layered.clear();
        self.waiting_reads.clear();
        self.read_clients.clear();
        self.term_waiters.clear();
    }

    fn quorum_size(&self) -> usize {
        self.topology.shard(self.shard).quorum()
    }

    fn correspondent(&self, tid: TxnId, client_dc: DcId) -> NodeId {
        NodeId::CoCoord { group: route_to_group(tid, self.cfg.groups), dc: client_dc }
    }

    fn local_cocoord(&self, tid: TxnId) -> NodeId {
        NodeId::CoCoord { group: route_to_group(tid, self.cfg.groups), dc: self.dc }
    }

    pub fn handle(
        &mut self,
        net: &mut Kernel<Msg>,
        routing: &Routing,
        from: NodeId,
        msg: Msg,
    ) {
        match msg {
            Msg::Prepare { tid, ts, rset, wset, shard_list, client, read_opt } => {
                self.on_prepare(net, routing, tid, ts, rset, wset, shard_list, client, read_opt)
            }
            Msg::ReadRequest { tid, ts, key, lock_read } => {
                self.on_read(net, routing, from, tid, ts, key, lock_read)
            }
            Msg::AbortExecution { tid } => {
                let mut ev = Vec::new();
                self.store.release_cc(net.now(), tid, &mut ev);
                self.process_store_events(net, routing, ev);
            }
            Msg::ReplicationAppend { entry, leader_dc, .. } => {
                self.on_append(net, routing, entry, leader_dc)
            }
            Msg::ReplicationAck { index, from, .. } => self.on_ack(net, routing, index, from),
            Msg::PreCommitNotify { tid, decision } => {
                self.on_precommit_notify(net, routing, tid, decision)
            }
            Msg::FinalDecision { tid, decision, reason } => {
                self.apply_final(net, routing, tid, decision, reason)
            }
            Msg::DecisionApply { tid, decision, writes, .. } => {
                if decision == Decision::Commit {
                    self.store.apply_versioned_commit(&writes, tid);
                }
            }
            Msg::LeaderReport { tid, shard, vote, reason, replication_complete, shard_list, client } => {
                self.on_layered_report(
                    net,
                    routing,
                    tid,
                    shard,
                    vote,
                    reason,
                    replication_complete,
                    shard_list,
                    client,
                )
            }
            Msg::TerminationQuery { tid, shard, from } => {
                debug_assert_eq!(shard, self.shard);
                self.answer_termination(net, tid, from)
            }
            Msg::ProbeReplicas { tid, shard } => {
                debug_assert_eq!(shard, self.shard);
                net.send(self.me, from, Msg::ProbeAck { tid, shard, from_dc: self.dc });
            }
            Msg::Timer(TimerKind::LeaderAwait { tid }) => self.on_leader_await(net, tid),
            Msg::Timer(TimerKind::LockTimeout { tid }) => {
                let mut ev = Vec::new();
                if self.store.timeout_waiting(net.now(), tid, &mut ev) {
                    self.process_store_events(net, routing, ev);
                }
            }
            other => panic!("replica {}: unexpected message {other:?}", self.me),
        }
    }

    // ------------------------------------------------------------------
    // Prepare and replication
    // ------------------------------------------------------------------

    #[allow(clippy::too_many_arguments)]
    fn on_prepare(
        &mut self,
        net: &mut Kernel<Msg>,
        routing: &Routing,
        tid: TxnId,
        ts: TxnTs,
        rset: Vec<(Key, crate::types::ReadVersion)>,
        wset: Vec<(Key, Value)>,
        shard_list: Vec<ShardId>,
        client: NodeId,
        read_opt: bool,
    ) {
        if !self.is_leader {
            // Stale addressing across an oracle reassignment; hand over.
            let leader = routing.leader_node(self.shard);
            if leader != self.me {
                net.send(
                    self.me,
                    leader,
                    Msg::Prepare { tid, ts, rset, wset, shard_list, client, read_opt },
                );
            }
            return;
        }
        if self.decided.contains_key(&tid) {
            return; // a final decision raced ahead of the prepare
        }
        if self.pending.contains_key(&tid) || self.log.find(tid).is_some() {
            // Duplicate prepare (client re-drive): the vote is cast, and for
            // an inherited log entry it is immutable; at most refresh the
            // slow-path evidence.
            if let Some(e) = self.log.find(tid) {
                let (index, quorum) = (e.index, self.quorum.is_quorum(e.index));
                if quorum {
                    self.send_report(net, routing, tid, index, true);
                }
            }
            return;
        }
        net.trace.push(TraceEvent::PrepareReceived { at: net.now(), shard: self.shard, tid });
        self.pending.insert(
            tid,
            PendingTxn {
                rset: rset.clone(),
                wset: wset.clone(),
                shard_list,
                client,
                vote: None,
                entry_index: None,
            },
        );
        let mut ev = Vec::new();
        let outcome = self.store.prepare(net.now(), tid, ts, rset, wset, read_opt, &mut ev);
        self.process_store_events(net, routing, ev);
        match outcome {
            PrepareOutcome::Decided { vote, withheld, reason } => {
                self.record_vote(net, routing, tid, vote, withheld, reason)
            }
            PrepareOutcome::Waiting => {
                let timeout = self.cfg.recovery_timeout;
                net.timer(self.me, timeout, Msg::Timer(TimerKind::LockTimeout { tid }));
            }
        }
    }

    fn record_vote(
        &mut self,
        net: &mut Kernel<Msg>,
        routing: &Routing,
        tid: TxnId,
        vote: Vote,
        withheld: bool,
        reason: Option<AbortReason>,
    ) {
        net.trace.push(TraceEvent::VoteRecorded {
            at: net.now(),
            shard: self.shard,
            tid,
            vote,
            withheld,
        });
        if let Some(p) = self.pending.get_mut(&tid) {
            p.vote = Some((vote, reason));
        }
        if self.cfg.protocol == Protocol::D2pc {
            // If the co-located co-coordinator and the correspondent both
            // die after PreCommit, nobody pushes the decision here; ask for
            // it rather than hold resources forever.
            let timeout = self.cfg.recovery_timeout;
            net.timer(self.me, timeout, Msg::Timer(TimerKind::LeaderAwait { tid }));
        }
        if withheld {
            // Buffered until every transaction it read from commits.
            return;
        }
        self.begin_replication(net, routing, tid);
    }

    fn on_leader_await(&mut self, net: &mut Kernel<Msg>, tid: TxnId) {
        if self.decided.contains_key(&tid) {
            return;
        }
        let me = self.me;
        let timeout = self.cfg.recovery_timeout;
        let group = route_to_group(tid, self.cfg.groups);
        for dc in self.topology.dcs() {
            let target = NodeId::CoCoord { group, dc };
            if dc == self.dc {
                net.send_local(me, target, Msg::DecisionRequest { tid, from: me });
            } else {
                net.send(me, target, Msg::DecisionRequest { tid, from: me });
            }
        }
        net.timer(me, timeout, Msg::Timer(TimerKind::LeaderAwait { tid }));
    }

    /// Appends the log entry (the leader's own copy is durable immediately
    /// and counts toward the quorum), fans it out to every replica including
    /// itself, and sends the vote directly to co-coordinators of datacenters
    /// without a replica of this shard.
    fn begin_replication(&mut self, net: &mut Kernel<Msg>, routing: &Routing, tid: TxnId) {
        let p = self.pending.get_mut(&tid).expect("pending txn");
        let (vote, reason) = p.vote.expect("vote recorded");
        let entry = LogEntry {
            index: self.log.next_index(),
            tid,
            rset: p.rset.clone(),
            wset: p.wset.clone(),
            vote,
            shard_list: p.shard_list.clone(),
            client_dc: p.client.dc(),
            client: match p.client {
                NodeId::Client { id, .. } => id,
                other => panic!("client field holds {other}"),
            },
        };
        p.entry_index = Some(entry.index);
        let shard_list = p.shard_list.clone();
        let client = p.client;
        let index = entry.index;
        self.log.append(entry.clone());
        self.acked.entry(index).or_default().insert(self.dc);
        if self.quorum.record_ack(index, self.dc, self.quorum_size()) {
            self.on_quorum_complete(net, routing, index);
        }
        for &dc in &self.topology.shard(self.shard).replicas {
            net.send(
                self.me,
                NodeId::Replica { shard: self.shard, dc },
                Msg::ReplicationAppend { shard: self.shard, entry: entry.clone(), leader_dc: self.dc },
            );
        }
        for dc in self.topology.dcs() {
            if self.topology.shard(self.shard).has_replica_in(dc) {
                continue;
            }
            let target = NodeId::CoCoord { group: route_to_group(tid, self.cfg.groups), dc };
            if self.cfg.protocol == Protocol::D2pc {
                net.send(
                    self.me,
                    target,
                    Msg::FollowerNotice {
                        tid,
                        shard: self.shard,
                        vote,
                        reason,
                        replicated: false,
                        replica_dc: None,
                        shard_list: shard_list.clone(),
                        client,
                    },
                );
            }
        }
        if vote == Vote::Abort {
            // Aborts need no replication quorum to take effect globally; the
            // report lets the decision maker cut the transaction loose now.
            self.send_report(net, routing, tid, index, false);
        }
    }

    fn on_append(&mut self, net: &mut Kernel<Msg>, routing: &Routing, entry: LogEntry, leader_dc: DcId) {
        let index = entry.index;
        let applied = self.log.append(entry);
        if applied.is_empty() {
            if leader_dc == self.dc && index < self.log.next_index() {
                // The leader's own fan-out copy: the append was durable at
                // replication start, but the replica-side notice to the
                // co-located co-coordinator happens on delivery, like on any
                // other replica.
                let e = self.log.get(index).expect("entry").clone();
                self.notice_local_cocoord(net, routing, &e);
                return;
            }
            // Duplicate: one ack/notice per (entry, leader). A new leader's
            // re-replication earns a fresh ack so it can rebuild its quorum.
            if index < self.log.next_index()
                && leader_dc != self.dc
                && self.acked.entry(index).or_default().insert(leader_dc)
            {
                net.send(
                    self.me,
                    NodeId::Replica { shard: self.shard, dc: leader_dc },
                    Msg::ReplicationAck { shard: self.shard, index, from: self.dc },
                );
            }
            return;
        }
        for idx in applied {
            let e = self.log.get(idx).expect("just appended").clone();
            if leader_dc != self.dc {
                self.acked.entry(idx).or_default().insert(leader_dc);
                net.send(
                    self.me,
                    NodeId::Replica { shard: self.shard, dc: leader_dc },
                    Msg::ReplicationAck { shard: self.shard, index: idx, from: self.dc },
                );
            }
            self.notice_local_cocoord(net, routing, &e);
        }
    }

    /// The co-located co-coordinator learns vote, replication reply, and
    /// shard list the instant a replica holds the entry.
    fn notice_local_cocoord(&mut self, net: &mut Kernel<Msg>, _routing: &Routing, e: &LogEntry) {
        if self.cfg.protocol != Protocol::D2pc {
            return;
        }
        if !self.noticed.insert(e.tid) {
            return;
        }
        let cocoord = self.local_cocoord(e.tid);
        net.send_local(
            self.me,
            cocoord,
            Msg::FollowerNotice {
                tid: e.tid,
                shard: self.shard,
                vote: e.vote,
                reason: None,
                replicated: true,
                replica_dc: Some(self.dc),
                shard_list: e.shard_list.clone(),
                client: NodeId::Client { id: e.client, dc: e.client_dc },
            },
        );
    }

    fn on_ack(&mut self, net: &mut Kernel<Msg>, routing: &Routing, index: u64, from: DcId) {
        if !self.is_leader {
            return; // ack addressed to a demoted leader
        }
        if self.quorum.record_ack(index, from, self.quorum_size()) {
            self.on_quorum_complete(net, routing, index);
        }
    }

    fn on_quorum_complete(&mut self, net: &mut Kernel<Msg>, routing: &Routing, index: u64) {
        self.send_report(net, routing, self.log.get(index).expect("entry").tid, index, true);
        let tid = self.log.get(index).expect("entry").tid;
        if let Some(waiters) = self.term_waiters.remove(&tid) {
            for w in waiters {
                self.answer_termination(net, tid, w);
            }
        }
    }

    /// Slow-path evidence: vote plus replication completion, to the
    /// correspondent coordinator (or the layered coordinator).
    fn send_report(
        &mut self,
        net: &mut Kernel<Msg>,
        routing: &Routing,
        tid: TxnId,
        index: u64,
        replication_complete: bool,
    ) {
        let e = self.log.get(index).expect("entry").clone();
        let reason = self.pending.get(&tid).and_then(|p| p.vote.and_then(|(_, r)| r));
        let report = Msg::LeaderReport {
            tid,
            shard: self.shard,
            vote: e.vote,
            reason,
            replication_complete,
            shard_list: e.shard_list.clone(),
            client: NodeId::Client { id: e.client, dc: e.client_dc },
        };
        match self.cfg.protocol {
            Protocol::D2pc => {
                let target = self.correspondent(tid, e.client_dc);
                net.send(self.me, target, report);
            }
            Protocol::Layered => {
                let coord_shard = layered_coordinator(&e.shard_list);
                let coord = routing.leader_node(coord_shard);
                if coord == self.me {
                    let (vote, shard_list, client) =
                        (e.vote, e.shard_list.clone(), NodeId::Client { id: e.client, dc: e.client_dc });
                    self.on_layered_report(
                        net,
                        routing,
                        tid,
                        self.shard,
                        vote,
                        reason,
                        replication_complete,
                        shard_list,
                        client,
                    );
                } else {
                    net.send(self.me, coord, report);
                }
            }
        }
    }

    // ------------------------------------------------------------------
    // Reads
    // ------------------------------------------------------------------

    #[allow(clippy::too_many_arguments)]
    fn on_read(
        &mut self,
        net: &mut Kernel<Msg>,
        routing: &Routing,
        from: NodeId,
        tid: TxnId,
        ts: TxnTs,
        key: Key,
        lock_read: bool,
    ) {
        if !self.is_leader {
            // Read-optimization path: serve the latest committed version,
            // skipping dependency recording entirely.
            let (value, version) = self.store.read_follower(key);
            net.trace.push(TraceEvent::ReadServed {
                at: net.now(),
                shard: self.shard,
                tid,
                key,
                version: crate::types::ReadVersion::Committed(version),
                follower: true,
            });
            net.send(
                self.me,
                from,
                Msg::ReadReply {
                    tid,
                    key,
                    value,
                    version: crate::types::ReadVersion::Committed(version),
                },
            );
            return;
        }
        self.read_clients.insert(tid, from);
        let mut ev = Vec::new();
        let take_lock = lock_read && self.cfg.cc == CcMode::TwoPl;
        let outcome = self.store.read_leader(net.now(), tid, ts, key, take_lock, &mut ev);
        self.process_store_events(net, routing, ev);
        match outcome {
            ReadOutcome::Ready { value, version, .. } => {
                net.trace.push(TraceEvent::ReadServed {
                    at: net.now(),
                    shard: self.shard,
                    tid,
                    key,
                    version,
                    follower: false,
                });
                net.send(self.me, from, Msg::ReadReply { tid, key, value, version });
            }
            ReadOutcome::Waiting => {
                self.waiting_reads.insert((tid, key), from);
                let timeout = self.cfg.recovery_timeout;
                net.timer(self.me, timeout, Msg::Timer(TimerKind::LockTimeout { tid }));
            }
        }
    }

    // ------------------------------------------------------------------
    // Decisions
    // ------------------------------------------------------------------

    fn on_precommit_notify(
        &mut self,
        net: &mut Kernel<Msg>,
        routing: &Routing,
        tid: TxnId,
        decision: Decision,
    ) {
        match decision {
            Decision::Commit => {
                if self.decided.contains_key(&tid) {
                    return; // final decision already applied; late PreCommit is a no-op
                }
                let mut ev = Vec::new();
                if self.store.precommit(net.now(), tid, &mut ev) {
                    net.trace.push(TraceEvent::PreCommitApplied {
                        at: net.now(),
                        shard: self.shard,
                        tid,
                    });
                }
                self.process_store_events(net, routing, ev);
            }
            // A failed vote lets every co-located leader abort right away;
            // the correspondent's final Abort follows from the same vote.
            Decision::Abort => self.apply_final(net, routing, tid, Decision::Abort, None),
        }
    }

    pub fn apply_final(
        &mut self,
        net: &mut Kernel<Msg>,
        routing: &Routing,
        tid: TxnId,
        decision: Decision,
        _reason: Option<AbortReason>,
    ) {
        if self.decided.contains_key(&tid) {
            assert_eq!(self.decided[&tid], decision, "conflicting final decisions for {tid}");
            return;
        }
        self.decided.insert(tid, decision);
        let now = net.now();
        let mut ev = Vec::new();
        let mut installs: Vec<(crate::types::Key, crate::types::Version, crate::types::Value)> =
            Vec::new();
        if self.store.txn(tid).is_some() {
            self.store.apply_decision(now, tid, decision, &mut ev);
        } else if decision == Decision::Commit {
            // Reassigned leader applying a commit it never prepared: take the
            // write set from the durable log.
            let e = self.log.find(tid).expect("commit decision without a log entry").clone();
            for (key, version, value) in self.store.apply_replicated_commit(&e.wset, tid) {
                ev.push(StoreEvent::Installed { key, version, value, tid });
            }
        } else {
            self.store.apply_decision(now, tid, decision, &mut ev);
        }
        net.trace.push(TraceEvent::DecisionApplied { at: now, shard: self.shard, tid, decision });
        for e in &ev {
            if let StoreEvent::Installed { key, version, value, .. } = e {
                installs.push((*key, *version, *value));
            }
        }
        self.process_store_events(net, routing, ev);
        if self.is_leader && decision == Decision::Commit {
            for &dc in &self.topology.shard(self.shard).replicas {
                if dc == self.dc {
                    continue;
                }
                net.send(
                    self.me,
                    NodeId::Replica { shard: self.shard, dc },
                    Msg::DecisionApply {
                        tid,
                        shard: self.shard,
                        decision,
                        writes: installs.clone(),
                    },
                );
            }
        }
        self.pending.remove(&tid);
    }

    // ------------------------------------------------------------------
    // Store event plumbing
    // ------------------------------------------------------------------

    fn emit_simple_event(&mut self, net: &mut Kernel<Msg>, e: StoreEvent) {
        match e {
            StoreEvent::WrDependency { reader, writer, key } => {
                net.trace.push(TraceEvent::WrDependency {
                    at: net.now(),
                    shard: self.shard,
                    reader,
                    writer,
                    key,
                });
            }
            StoreEvent::CcpClosed { tid, start, end } => {
                net.trace.push(TraceEvent::CcpClosed {
                    shard: self.shard,
                    dc: self.dc,
                    tid,
                    start,
                    end,
                });
            }
            other => panic!("not a simple event: {other:?}"),
        }
    }

    fn process_store_events(
        &mut self,
        net: &mut Kernel<Msg>,
        routing: &Routing,
        ev: Vec<StoreEvent>,
    ) {
        for e in ev {
            match e {
                StoreEvent::WrDependency { .. } | StoreEvent::CcpClosed { .. } => {
                    self.emit_simple_event(net, e)
                }
                StoreEvent::Installed { key, version, value, tid } => {
                    let _ = value;
                    net.trace.push(TraceEvent::VersionInstalled {
                        at: net.now(),
                        shard: self.shard,
                        key,
                        version,
                        tid,
                    });
                }
                StoreEvent::VoteReleased { tid } => {
                    // Dependencies committed; the buffered Commit vote ships.
                    // The pending record can be gone if a global abort beat
                    // the release here.
                    if self.pending.get(&tid).is_some_and(|p| p.entry_index.is_none()) {
                        net.trace.push(TraceEvent::VoteRecorded {
                            at: net.now(),
                            shard: self.shard,
                            tid,
                            vote: Vote::Commit,
                            withheld: false,
                        });
                        self.begin_replication(net, routing, tid);
                    }
                }
                StoreEvent::CascadeAborted { tid, announce } => {
                    net.trace.push(TraceEvent::CascadeAbort {
                        at: net.now(),
                        shard: self.shard,
                        tid,
                    });
                    if announce {
                        // The withheld Commit vote turns into an Abort vote
                        // the rest of the system must hear about.
                        if let Some(p) = self.pending.get_mut(&tid) {
                            p.vote = Some((Vote::Abort, Some(AbortReason::Cascade)));
                            net.trace.push(TraceEvent::VoteRecorded {
                                at: net.now(),
                                shard: self.shard,
                                tid,
                                vote: Vote::Abort,
                                withheld: false,
                            });
                            if p.entry_index.is_none() {
                                self.begin_replication(net, routing, tid);
                            }
                        }
                    }
                }
                StoreEvent::ReadGranted { tid, key } => {
                    let mut ev2 = Vec::new();
                    let (value, version, _) = self.store.complete_read(tid, key, &mut ev2);
                    for e2 in ev2 {
                        self.emit_simple_event(net, e2);
                    }
                    net.trace.push(TraceEvent::ReadServed {
                        at: net.now(),
                        shard: self.shard,
                        tid,
                        key,
                        version,
                        follower: false,
                    });
                    if let Some(client) = self.waiting_reads.remove(&(tid, key)) {
                        net.send(self.me, client, Msg::ReadReply { tid, key, value, version });
                    }
                }
                StoreEvent::PrepareReady { tid, vote, withheld, reason } => {
                    if self.pending.contains_key(&tid) {
                        self.record_vote(net, routing, tid, vote, withheld, reason);
                    }
                }
                StoreEvent::ExecutionWounded { tid } => {
                    // Pending queued reads of the victim will never be
                    // granted; drop them and tell the client to start over.
                    self.waiting_reads.retain(|(t, _), _| *t != tid);
                    if let Some(&client) = self.read_clients.get(&tid) {
                        net.send(self.me, client, Msg::ExecutionWounded { tid });
                    }
                }
            }
        }
    }

    // ------------------------------------------------------------------
    // Layered coordination
    // ------------------------------------------------------------------

    #[allow(clippy::too_many_arguments)]
    fn on_layered_report(
        &mut self,
        net: &mut Kernel<Msg>,
        routing: &Routing,
        tid: TxnId,
        shard: ShardId,
        vote: Vote,
        reason: Option<AbortReason>,
        _replication_complete: bool,
        shard_list: Vec<ShardId>,
        client: NodeId,
    ) {
        assert_eq!(self.cfg.protocol, Protocol::Layered, "leader reports route to cocoords in d2pc");
        let st = self.layered.entry(tid).or_default();
        st.shard_list = shard_list;
        st.client = Some(client);
        if let Some(&(prev, _)) = st.votes.get(&shard) {
            assert_eq!(prev, vote, "conflicting votes from shard {shard} for {tid}");
        }
        st.votes.insert(shard, (vote, reason));
        if st.decided || !st.shard_list.iter().all(|s| st.votes.contains_key(s)) {
            return;
        }
        st.decided = true;
        let abort = st.votes.values().find(|(v, _)| *v == Vote::Abort);
        let decision = if abort.is_some() { Decision::Abort } else { Decision::Commit };
        let reason = abort.and_then(|(_, r)| *r);
        let client = st.client.expect("client learned from reports");
        let shard_list = st.shard_list.clone();
        net.trace.push(TraceEvent::DecisionMade {
            at: net.now(),
            tid,
            decision,
            by: self.me,
            path: DecisionPath::Slow,
        });
        if client.dc() == self.dc {
            net.send_local(self.me, client, Msg::FinalDecision { tid, decision, reason });
        } else {
            net.send(self.me, client, Msg::FinalDecision { tid, decision, reason });
        }
        for s in shard_list {
            let leader = routing.leader_node(s);
            if leader == self.me {
                self.apply_final(net, routing, tid, decision, reason);
            } else if leader.dc() == self.dc {
                net.send_local(self.me, leader, Msg::FinalDecision { tid, decision, reason });
            } else {
                net.send(self.me, leader, Msg::FinalDecision { tid, decision, reason });
            }
        }
    }

    // ------------------------------------------------------------------
    // Termination protocol (recovery)
    // ------------------------------------------------------------------

    /// Replies with vote and replication status once both are settled;
    /// queries for still-replicating transactions wait for the quorum.
    fn answer_termination(&mut self, net: &mut Kernel<Msg>, tid: TxnId, asker: NodeId) {
        if let Some(&decision) = self.decided.get(&tid) {
            let vote = match decision {
                Decision::Commit => Vote::Commit,
                Decision::Abort => Vote::Abort,
            };
            net.send(
                self.me,
                asker,
                Msg::TerminationReply {
                    tid,
                    shard: self.shard,
                    vote,
                    reason: None,
                    replication_complete: true,
                },
            );
            return;
        }
        let entry = self.log.find(tid);
        match entry {
            Some(e) => {
                let complete = self.quorum.is_quorum(e.index);
                if complete || e.vote == Vote::Abort {
                    let reason = self.pending.get(&tid).and_then(|p| p.vote.and_then(|(_, r)| r));
                    net.send(
                        self.me,
                        asker,
                        Msg::TerminationReply {
                            tid,
                            shard: self.shard,
                            vote: e.vote,
                            reason,
                            replication_complete: complete,
                        },
                    );
                } else {
                    self.term_waiters.entry(tid).or_default().push(asker);
                }
            }
            None => {
                // Prepare not yet processed (or vote withheld); answer once
                // the vote exists and replication finishes.
                self.term_waiters.entry(tid).or_default().push(asker);
            }
        }
    }

    // ------------------------------------------------------------------
    // Oracle leader reassignment
    // ------------------------------------------------------------------

    pub fn demote(&mut self) {
        self.is_leader = false;
    }

    /// Oracle promotion: the new leader starts from the quorum-committed
    /// prefix (entries handed over by the driver), then re-replicates
    /// everything undecided to rebuild acks and re-report on the slow path.
    pub fn promote(
        &mut self,
        net: &mut Kernel<Msg>,
        routing: &Routing,
        inherited: Vec<LogEntry>,
    ) {
        self.is_leader = true;
        for e in inherited {
            if self.log.find(e.tid).is_none() && e.index >= self.log.next_index() {
                let mut e = e;
                e.index = self.log.next_index();
                let applied = self.log.append(e.clone());
                debug_assert_eq!(applied.len(), 1);
                self.notice_local_cocoord(net, routing, &e);
            }
        }
        let undecided: Vec<u64> = self
            .log
            .entries()
            .iter()
            .filter(|e| !self.decided.contains_key(&e.tid))
            .map(|e| e.index)
            .collect();
        for index in undecided {
            let entry = self.log.get(index).expect("entry").clone();
            self.acked.entry(index).or_default().insert(self.dc);
            if self.quorum.record_ack(index, self.dc, self.quorum_size()) {
                self.on_quorum_complete(net, routing, index);
            }
            for &dc in &self.topology.shard(self.shard).replicas {
                if dc == self.dc {
                    continue;
                }
                net.send(
                    self.me,
                    NodeId::Replica { shard: self.shard, dc },
                    Msg::ReplicationAppend {
                        shard: self.shard,
                        entry: entry.clone(),
                        leader_dc: self.dc,
                    },
                );
            }
        }
    }
}
