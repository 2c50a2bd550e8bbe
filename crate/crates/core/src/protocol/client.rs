//! Closed-loop client state machine.
//!
//! A client runs one transaction chain at a time: generate a spec, issue all
//! reads in a single round, buffer writes locally, then commit. Reads route
//! to the co-located replica under read optimization (falling back to the
//! leader on timeout) and to shard leaders otherwise; 2PL without read
//! optimization takes read locks during execution. On abort the chain
//! retries immediately with a fresh transaction id but its original wait-die
//! timestamp; under 2PL with read optimization the retry is the enforced
//! second execution that takes read locks at the leaders, which keeps large
//! readers from starving.

use crate::protocol::{route_to_group, Msg, ProtocolConfig, Routing, TimerKind};
use crate::simnet::Kernel;
use crate::time::SimTime;
use crate::topology::{DcId, NodeId, ShardId, Topology};
use crate::trace::TraceEvent;
use crate::txkv::TxnTs;
use crate::types::{AbortReason, CcMode, Decision, Key, Protocol, ReadVersion, TxnId, Value};
use crate::workload::{Generator, TxnSpec};
use rand::rngs::StdRng;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

#[derive(Debug)]
struct Attempt {
    tid: TxnId,
    ts: TxnTs,
    spec: TxnSpec,
    /// Keys still waiting for a read reply; true if the request went to a
    /// local follower and may need the leader fallback.
    pending_reads: BTreeMap<Key, bool>,
    rset: Vec<(Key, ReadVersion)>,
    retries: u32,
    /// Second execution: reads go to leaders and take read locks.
    lock_reads: bool,
    /// Shards possibly holding execution-time read locks for this attempt.
    locked_shards: BTreeSet<ShardId>,
    sent_commit_at: Option<SimTime>,
}

pub struct ClientNode {
    pub id: u32,
    pub dc: DcId,
    me: NodeId,
    cfg: ProtocolConfig,
    topology: Arc<Topology>,
    rng: StdRng,
    generator: Generator,
    next_counter: u64,
    /// Transaction chains this client still has to run.
    quota: u64,
    deadline: Option<SimTime>,
    current: Option<Attempt>,
    pub chains_committed: u64,
    pub chains_failed: u64,
}

impl ClientNode {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: u32,
        dc: DcId,
        cfg: ProtocolConfig,
        topology: Arc<Topology>,
        rng: StdRng,
        generator: Generator,
        quota: u64,
        deadline: Option<SimTime>,
    ) -> ClientNode {
        ClientNode {
            id,
            dc,
            me: NodeId::Client { id, dc },
            cfg,
            topology,
            rng,
            generator,
            next_counter: 0,
            quota,
            deadline,
            current: None,
            chains_committed: 0,
            chains_failed: 0,
        }
    }

    /// Fresh transaction id: `(client id, counter)`; counters are never
    /// reused, aborted attempts included.
    fn begin(&mut self) -> TxnId {
        let tid = TxnId::new(self.id, self.next_counter);
        self.next_counter += 1;
        tid
    }

    fn shard_of(&self, key: Key) -> ShardId {
        ShardId((key % self.cfg.shard_count) as u32)
    }

    pub fn handle(&mut self, net: &mut Kernel<Msg>, routing: &Routing, _from: NodeId, msg: Msg) {
        match msg {
            Msg::Timer(TimerKind::ClientStart) => self.start_chain(net, routing),
            Msg::Timer(TimerKind::ReadRetry { tid, key }) => {
                self.on_read_retry(net, routing, tid, key)
            }
            Msg::Timer(TimerKind::CommitRetry { tid }) => {
                let waiting = self
                    .current
                    .as_ref()
                    .is_some_and(|a| a.tid == tid && a.sent_commit_at.is_some());
                if waiting {
                    // A crashed leader may have swallowed a prepare before
                    // the oracle reassigned it; prepares are idempotent, so
                    // re-drive the commit at the current leaders.
                    self.send_commit(net, routing);
                }
            }
            Msg::ReadReply { tid, key, value, version } => {
                let _ = value;
                self.on_read_reply(net, routing, tid, key, version)
            }
            Msg::ExecutionWounded { tid } => self.on_wounded(net, routing, tid),
            Msg::FinalDecision { tid, decision, reason } => {
                self.on_final(net, routing, tid, decision, reason)
            }
            other => panic!("client {}: unexpected message {other:?}", self.me),
        }
    }

    pub fn kick(&mut self, net: &mut Kernel<Msg>) {
        net.timer(self.me, SimTime::ZERO, Msg::Timer(TimerKind::ClientStart));
    }

    fn start_chain(&mut self, net: &mut Kernel<Msg>, routing: &Routing) {
        if self.quota == 0 {
            return;
        }
        if let Some(deadline) = self.deadline {
            if net.now() >= deadline {
                self.quota = 0;
                return;
            }
        }
        self.quota -= 1;
        let tid = self.begin();
        let ts = TxnTs { begin: net.now(), root: tid };
        let spec = self.generator.next_txn(&mut self.rng, tid);
        let lock_reads = self.cfg.cc == CcMode::TwoPl && !self.cfg.read_opt;
        let attempt = Attempt {
            tid,
            ts,
            spec,
            pending_reads: BTreeMap::new(),
            rset: Vec::new(),
            retries: 0,
            lock_reads,
            locked_shards: BTreeSet::new(),
            sent_commit_at: None,
        };
        self.current = Some(attempt);
        self.issue_reads(net, routing);
    }

    fn retry_chain(&mut self, net: &mut Kernel<Msg>, routing: &Routing) {
        let prev = self.current.take().expect("retrying a live chain");
        let tid = self.begin();
        // The chain keeps its original wait-die timestamp so it ages.
        let lock_reads = prev.lock_reads
            || (self.cfg.cc == CcMode::TwoPl && self.cfg.read_opt && self.cfg.second_execution);
        self.current = Some(Attempt {
            tid,
            ts: prev.ts,
            spec: prev.spec,
            pending_reads: BTreeMap::new(),
            rset: Vec::new(),
            retries: prev.retries + 1,
            lock_reads,
            locked_shards: BTreeSet::new(),
            sent_commit_at: None,
        });
        self.issue_reads(net, routing);
    }

    /// One-shot execution: every read goes out now; buffered own writes are
    /// served locally without touching the network.
    fn issue_reads(&mut self, net: &mut Kernel<Msg>, routing: &Routing) {
        let me = self.me;
        let read_timeout = self.cfg.recovery_timeout;
        let a = self.current.as_mut().expect("live attempt");
        let tid = a.tid;
        let ts = a.ts;
        let mut requests: Vec<(Key, NodeId, bool, bool)> = Vec::new();
        for &key in &a.spec.reads {
            if a.spec.writes.iter().any(|(k, _)| *k == key) {
                continue; // read-your-own-write from the local buffer
            }
            let shard = ShardId((key % self.cfg.shard_count) as u32);
            let leader = routing.leader_node(shard);
            let (target, lock, local) = if a.lock_reads {
                (leader, true, false)
            } else if self.cfg.read_opt && self.topology.shard(shard).has_replica_in(self.dc) {
                (NodeId::Replica { shard, dc: self.dc }, false, true)
            } else {
                (leader, false, false)
            };
            if lock {
                a.locked_shards.insert(shard);
            }
            a.pending_reads.insert(key, local);
            requests.push((key, target, lock, local));
        }
        if requests.is_empty() {
            self.send_commit(net, routing);
            return;
        }
        for (key, target, lock, local) in requests {
            net.send(me, target, Msg::ReadRequest { tid, ts, key, lock_read: lock });
            if local {
                net.timer(me, read_timeout, Msg::Timer(TimerKind::ReadRetry { tid, key }));
            }
        }
    }

    /// Local replica unresponsive: fall back to a leader read.
    fn on_read_retry(&mut self, net: &mut Kernel<Msg>, routing: &Routing, tid: TxnId, key: Key) {
        let me = self.me;
        let Some(a) = self.current.as_mut() else { return };
        if a.tid != tid || !matches!(a.pending_reads.get(&key), Some(true)) {
            return;
        }
        a.pending_reads.insert(key, false);
        let ts = a.ts;
        let shard = ShardId((key % self.cfg.shard_count) as u32);
        net.send(me, routing.leader_node(shard), Msg::ReadRequest { tid, ts, key, lock_read: false });
    }

    fn on_read_reply(
        &mut self,
        net: &mut Kernel<Msg>,
        routing: &Routing,
        tid: TxnId,
        key: Key,
        version: ReadVersion,
    ) {
        let Some(a) = self.current.as_mut() else { return };
        if a.tid != tid || !a.pending_reads.contains_key(&key) {
            return; // stale reply from an abandoned attempt
        }
        a.pending_reads.remove(&key);
        a.rset.push((key, version));
        if a.pending_reads.is_empty() {
            self.send_commit(net, routing);
        }
    }

    /// An older transaction wounded this attempt while it was still reading;
    /// drop any read locks elsewhere and go around with the same timestamp.
    /// After the commit request went out the global abort handles it instead.
    fn on_wounded(&mut self, net: &mut Kernel<Msg>, routing: &Routing, tid: TxnId) {
        let Some(a) = self.current.as_ref() else { return };
        if a.tid != tid || a.sent_commit_at.is_some() {
            return;
        }
        let locked: Vec<ShardId> = a.locked_shards.iter().copied().collect();
        let me = self.me;
        for shard in locked {
            net.send(me, routing.leader_node(shard), Msg::AbortExecution { tid });
        }
        self.finish_attempt(net, routing, Decision::Abort, Some(AbortReason::LockConflict), None);
    }

    /// Commit point: prepares carry each shard's slice of the read and write
    /// sets; the correspondent coordinator co-located with this client learns
    /// the participant list directly from us.
    fn send_commit(&mut self, net: &mut Kernel<Msg>, routing: &Routing) {
        let me = self.me;
        let my_dc = self.dc;
        let groups = self.cfg.groups;
        let shard_count = self.cfg.shard_count;
        let protocol = self.cfg.protocol;
        let read_opt_prepare = match self.cfg.cc {
            CcMode::Occ => true,
            CcMode::TwoPl => {
                let a = self.current.as_ref().expect("live attempt");
                !a.lock_reads && self.cfg.read_opt
            }
        };
        let retry_after = self.cfg.recovery_timeout * 2;
        let a = self.current.as_mut().expect("live attempt");
        if a.sent_commit_at.is_none() {
            a.sent_commit_at = Some(net.now());
        }
        let tid = a.tid;
        let ts = a.ts;
        net.timer(me, retry_after, Msg::Timer(TimerKind::CommitRetry { tid }));
        let mut shards: BTreeSet<ShardId> = BTreeSet::new();
        for (k, _) in &a.rset {
            shards.insert(ShardId((k % shard_count) as u32));
        }
        for (k, _) in &a.spec.writes {
            shards.insert(ShardId((k % shard_count) as u32));
        }
        assert!(!shards.is_empty(), "transactions touch at least one key");
        let shard_list: Vec<ShardId> = shards.iter().copied().collect();
        if protocol == Protocol::D2pc {
            let correspondent =
                NodeId::CoCoord { group: route_to_group(tid, groups), dc: my_dc };
            net.send_local(
                me,
                correspondent,
                Msg::CommitRequest { tid, shard_list: shard_list.clone(), client: me },
            );
        }
        for &shard in &shard_list {
            let rset: Vec<(Key, ReadVersion)> = a
                .rset
                .iter()
                .filter(|(k, _)| (k % shard_count) as u32 == shard.0)
                .copied()
                .collect();
            let wset: Vec<(Key, Value)> = a
                .spec
                .writes
                .iter()
                .filter(|(k, _)| (k % shard_count) as u32 == shard.0)
                .copied()
                .collect();
            net.send(
                me,
                routing.leader_node(shard),
                Msg::Prepare {
                    tid,
                    ts,
                    rset,
                    wset,
                    shard_list: shard_list.clone(),
                    client: me,
                    read_opt: read_opt_prepare,
                },
            );
        }
    }

    fn on_final(
        &mut self,
        net: &mut Kernel<Msg>,
        routing: &Routing,
        tid: TxnId,
        decision: Decision,
        reason: Option<AbortReason>,
    ) {
        let Some(a) = self.current.as_ref() else { return };
        if a.tid != tid {
            return; // duplicate or stale decision
        }
        let latency = a.sent_commit_at.map(|t| net.now() - t);
        self.finish_attempt(net, routing, decision, reason, latency);
    }

    fn finish_attempt(
        &mut self,
        net: &mut Kernel<Msg>,
        routing: &Routing,
        decision: Decision,
        reason: Option<AbortReason>,
        latency: Option<SimTime>,
    ) {
        let retry_limit = self.cfg.retry_limit;
        let a = self.current.as_ref().expect("live attempt");
        let participants: Vec<ShardId> = {
            let mut s: BTreeSet<ShardId> = BTreeSet::new();
            for (k, _) in &a.rset {
                s.insert(self.shard_of(*k));
            }
            for (k, _) in &a.spec.writes {
                s.insert(self.shard_of(*k));
            }
            s.into_iter().collect()
        };
        net.trace.push(TraceEvent::TxnOutcome {
            at: net.now(),
            tid: a.tid,
            client: self.id,
            decision,
            latency: latency.unwrap_or(SimTime::ZERO),
            retries: a.retries,
            participants,
            abort_reason: reason,
        });
        match decision {
            Decision::Commit => {
                self.chains_committed += 1;
                self.current = None;
                self.kick(net);
            }
            Decision::Abort => {
                if a.retries >= retry_limit {
                    if retry_limit > 0 {
                        // Exhausted a real retry budget: starved.
                        net.trace.push(TraceEvent::TxnFailed {
                            at: net.now(),
                            client: self.id,
                            last_tid: a.tid,
                            retries: a.retries,
                        });
                    }
                    self.chains_failed += 1;
                    self.current = None;
                    self.kick(net);
                } else {
                    self.retry_chain(net, routing);
                }
            }
        }
    }
}
