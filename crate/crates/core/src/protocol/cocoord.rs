//! Co-coordinator state machine.
//!
//! One co-coordinator per (group, datacenter). Every co-coordinator collects
//! votes from its co-located replicas (plus direct leader votes for shards
//! with no replica here) and independently makes the PreCommit decision: any
//! Abort vote decides Abort immediately, a full set of Commit votes decides
//! PreCommit; either way the co-located participant leaders hear at once.
//! Each replication reply is forwarded to the correspondent coordinator —
//! the co-coordinator co-located with the client and sole maker of the final
//! decision.
//!
//! The correspondent commits once every participant shard voted Commit and
//! showed F+1 durable copies (bypass-leader replies on the fast path, leader
//! quorum reports on the slow path; both reduce the same votes, so they
//! always produce the same output). The decision goes to the client first;
//! replication of the decision to the other co-coordinators and the leader
//! notifications follow off the commit path. Recovery after a correspondent
//! crash queries surviving co-coordinators for the decision and falls back
//! to the termination protocol over participant leaders.

use crate::protocol::{Msg, ProtocolConfig, Routing, TimerKind};
use crate::simnet::Kernel;
use crate::topology::{DcId, NodeId, ShardId, Topology};
use crate::trace::{DecisionPath, TraceEvent};
use crate::types::{AbortReason, Decision, TxnId, Vote};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

#[derive(Debug, Default)]
struct RecoveryState {
    started: bool,
    /// Peer datacenters that answered the decision query this round.
    responders: BTreeMap<DcId, Option<(Decision, Option<AbortReason>)>>,
    /// Acting as the elected recoverer, running the termination protocol.
    terminating: bool,
    term_votes: BTreeMap<ShardId, (Vote, Option<AbortReason>, bool)>,
}

#[derive(Debug, Default)]
struct CoTxnState {
    shard_list: Option<Vec<ShardId>>,
    client: Option<NodeId>,
    votes: BTreeMap<ShardId, (Vote, Option<AbortReason>)>,
    /// Replica datacenters whose replication replies reached us, per shard.
    replies: BTreeMap<ShardId, BTreeSet<DcId>>,
    /// Shards with any reply at all: the entry's existence proves the
    /// leader's own durable append, which counts toward the quorum.
    leader_evidence: BTreeSet<ShardId>,
    /// Shards whose leader reported a completed quorum (slow path).
    slow_complete: BTreeSet<ShardId>,
    precommit_decision: Option<Decision>,
    /// Set when this node is the correspondent coordinator for the txn.
    is_correspondent: bool,
    final_decision: Option<(Decision, Option<AbortReason>)>,
    decision_acks: BTreeSet<DcId>,
    fault_tolerant: bool,
    await_timer_armed: bool,
    probe_acks: BTreeMap<ShardId, BTreeSet<DcId>>,
    probing: bool,
    recovery: RecoveryState,
    used_slow_evidence: bool,
}

pub struct CoCoordNode {
    pub group: u32,
    pub dc: DcId,
    me: NodeId,
    cfg: ProtocolConfig,
    topology: Arc<Topology>,
    txns: BTreeMap<TxnId, CoTxnState>,
}

impl CoCoordNode {
    pub fn new(group: u32, dc: DcId, cfg: ProtocolConfig, topology: Arc<Topology>) -> CoCoordNode {
        CoCoordNode {
            group,
            dc,
            me: NodeId::CoCoord { group, dc },
            cfg,
            topology,
            txns: BTreeMap::new(),
        }
    }

    /// Everything a co-coordinator holds is volatile.
    pub fn wipe_volatile(&mut self) {
        self.txns.clear();
    }

    pub fn final_decision(&self, tid: TxnId) -> Option<Decision> {
        self.txns.get(&tid).and_then(|t| t.final_decision.map(|(d, _)| d))
    }

    pub fn precommit_decision(&self, tid: TxnId) -> Option<Decision> {
        self.txns.get(&tid).and_then(|t| t.precommit_decision)
    }

    pub fn is_fault_tolerant(&self, tid: TxnId) -> bool {
        self.txns.get(&tid).is_some_and(|t| t.fault_tolerant)
    }

    fn peers(&self) -> Vec<NodeId> {
        let group = self.group;
        self.topology
            .dcs()
            .filter(|&dc| dc != self.dc)
            .map(|dc| NodeId::CoCoord { group, dc })
            .collect()
    }

    fn group_majority(&self) -> usize {
        self.topology.dc_count() / 2 + 1
    }

    pub fn handle(&mut self, net: &mut Kernel<Msg>, routing: &Routing, from: NodeId, msg: Msg) {
        match msg {
            Msg::CommitRequest { tid, shard_list, client } => {
                self.on_commit_request(net, routing, tid, shard_list, client)
            }
            Msg::FollowerNotice { tid, shard, vote, reason, replicated, replica_dc, shard_list, client } => {
                self.on_notice(net, routing, tid, shard, vote, reason, replicated, replica_dc, shard_list, client)
            }
            Msg::ForwardedReply { tid, shard, vote, reason, replica_dc } => {
                self.on_forwarded_reply(net, routing, tid, shard, vote, reason, replica_dc)
            }
            Msg::LeaderReport { tid, shard, vote, reason, replication_complete, shard_list, client } => {
                self.on_leader_report(
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
            Msg::DecisionReplicate { tid, decision, reason, shard_list } => {
                self.on_decision_replicate(net, routing, from, tid, decision, reason, shard_list)
            }
            Msg::DecisionAck { tid, from_dc } => self.on_decision_ack(tid, from_dc),
            Msg::RecoveryQuery { tid, from_dc } => {
                let decision = self.txns.get(&tid).and_then(|t| t.final_decision);
                let group = self.group;
                net.send(
                    self.me,
                    NodeId::CoCoord { group, dc: from_dc },
                    Msg::RecoveryReply { tid, decision, from_dc: self.dc },
                );
            }
            Msg::DecisionRequest { tid, from } => {
                if let Some((decision, reason)) =
                    self.txns.get(&tid).and_then(|t| t.final_decision)
                {
                    if from.dc() == self.dc {
                        net.send_local(self.me, from, Msg::FinalDecision { tid, decision, reason });
                    } else {
                        net.send(self.me, from, Msg::FinalDecision { tid, decision, reason });
                    }
                }
            }
            Msg::RecoveryReply { tid, decision, from_dc } => {
                let t = self.txns.entry(tid).or_default();
                t.recovery.responders.insert(from_dc, decision);
            }
            Msg::TerminationReply { tid, shard, vote, reason, replication_complete } => {
                self.on_termination_reply(net, routing, tid, shard, vote, reason, replication_complete)
            }
            Msg::ProbeAck { tid, shard, from_dc } => {
                let t = self.txns.entry(tid).or_default();
                t.probe_acks.entry(shard).or_default().insert(from_dc);
            }
            Msg::Timer(kind) => self.on_timer(net, routing, kind),
            other => panic!("cocoord {}: unexpected message {other:?}", self.me),
        }
    }

    // ------------------------------------------------------------------
    // Evidence intake
    // ------------------------------------------------------------------

    fn on_commit_request(
        &mut self,
        net: &mut Kernel<Msg>,
        routing: &Routing,
        tid: TxnId,
        shard_list: Vec<ShardId>,
        client: NodeId,
    ) {
        let timeout = self.cfg.recovery_timeout;
        let t = self.txns.entry(tid).or_default();
        t.is_correspondent = true;
        t.client = Some(client);
        t.shard_list = Some(shard_list);
        if !t.await_timer_armed {
            t.await_timer_armed = true;
            net.timer(self.me, timeout, Msg::Timer(TimerKind::AwaitDecision { tid }));
        }
        self.try_precommit(net, routing, tid);
        self.try_final(net, routing, tid);
    }

    fn merge_vote(
        t: &mut CoTxnState,
        shard: ShardId,
        vote: Vote,
        reason: Option<AbortReason>,
    ) {
        if let Some(&(prev, _)) = t.votes.get(&shard) {
            assert_eq!(prev, vote, "conflicting votes for shard {shard}");
            return;
        }
        t.votes.insert(shard, (vote, reason));
    }

    #[allow(clippy::too_many_arguments)]
    fn on_notice(
        &mut self,
        net: &mut Kernel<Msg>,
        routing: &Routing,
        tid: TxnId,
        shard: ShardId,
        vote: Vote,
        reason: Option<AbortReason>,
        replicated: bool,
        replica_dc: Option<DcId>,
        shard_list: Vec<ShardId>,
        client: NodeId,
    ) {
        self.note_txn(net, tid);
        let t = self.txns.get_mut(&tid).expect("created");
        t.shard_list.get_or_insert(shard_list);
        t.client.get_or_insert(client);
        Self::merge_vote(t, shard, vote, reason);
        if replicated {
            t.leader_evidence.insert(shard);
            if let Some(dc) = replica_dc {
                t.replies.entry(shard).or_default().insert(dc);
            }
        }
        self.try_precommit(net, routing, tid);
        // Bypass-leader relay: hand the replication reply straight to the
        // correspondent coordinator.
        let t = self.txns.get_mut(&tid).expect("created");
        if t.is_correspondent {
            self.try_final(net, routing, tid);
        } else if replicated {
            if let Some(dc) = replica_dc {
                let client_dc = client.dc();
                let target = NodeId::CoCoord { group: self.group, dc: client_dc };
                net.send(self.me, target, Msg::ForwardedReply { tid, shard, vote, reason, replica_dc: dc });
            }
        }
    }

    fn on_forwarded_reply(
        &mut self,
        net: &mut Kernel<Msg>,
        routing: &Routing,
        tid: TxnId,
        shard: ShardId,
        vote: Vote,
        reason: Option<AbortReason>,
        replica_dc: DcId,
    ) {
        self.note_txn(net, tid);
        let t = self.txns.get_mut(&tid).expect("created");
        Self::merge_vote(t, shard, vote, reason);
        t.leader_evidence.insert(shard);
        t.replies.entry(shard).or_default().insert(replica_dc);
        if t.final_decision.is_some() {
            return; // replies after the decision are ignored
        }
        self.try_precommit(net, routing, tid);
        self.try_final(net, routing, tid);
    }

    #[allow(clippy::too_many_arguments)]
    fn on_leader_report(
        &mut self,
        net: &mut Kernel<Msg>,
        routing: &Routing,
        tid: TxnId,
        shard: ShardId,
        vote: Vote,
        reason: Option<AbortReason>,
        replication_complete: bool,
        shard_list: Vec<ShardId>,
        client: NodeId,
    ) {
        self.note_txn(net, tid);
        let t = self.txns.get_mut(&tid).expect("created");
        t.shard_list.get_or_insert(shard_list);
        t.client.get_or_insert(client);
        Self::merge_vote(t, shard, vote, reason);
        t.leader_evidence.insert(shard);
        if replication_complete {
            t.slow_complete.insert(shard);
        }
        self.try_precommit(net, routing, tid);
        self.try_final(net, routing, tid);
    }

    /// First contact with a transaction arms the decision-wait timer so the
    /// co-coordinator can drive recovery if the correspondent dies.
    fn note_txn(&mut self, net: &mut Kernel<Msg>, tid: TxnId) {
        let timeout = self.cfg.recovery_timeout;
        let me = self.me;
        let t = self.txns.entry(tid).or_default();
        if !t.await_timer_armed {
            t.await_timer_armed = true;
            net.timer(me, timeout, Msg::Timer(TimerKind::AwaitDecision { tid }));
        }
    }

    // ------------------------------------------------------------------
    // PreCommit decision
    // ------------------------------------------------------------------

    /// Abort as soon as any vote is Abort; PreCommit only with a Commit vote
    /// from every shard in the list. The decision never reverts, and the
    /// co-located participant leaders hear immediately.
    fn try_precommit(&mut self, net: &mut Kernel<Msg>, routing: &Routing, tid: TxnId) {
        let t = self.txns.get_mut(&tid).expect("txn state");
        if t.precommit_decision.is_some() {
            return;
        }
        let abort = t.votes.values().any(|(v, _)| *v == Vote::Abort);
        let decision = if abort {
            Decision::Abort
        } else {
            match &t.shard_list {
                Some(list) if list.iter().all(|s| t.votes.contains_key(s)) => Decision::Commit,
                _ => return,
            }
        };
        t.precommit_decision = Some(decision);
        let list = t.shard_list.clone().unwrap_or_default();
        let notify = match decision {
            Decision::Commit => Decision::Commit,
            Decision::Abort => Decision::Abort,
        };
        for shard in list {
            if routing.leader_dc(shard) == self.dc {
                net.send_local(
                    self.me,
                    routing.leader_node(shard),
                    Msg::PreCommitNotify { tid, decision: notify },
                );
            }
        }
    }

    // ------------------------------------------------------------------
    // Final decision (correspondent only)
    // ------------------------------------------------------------------

    /// F+1 distinct durable copies proven by bypass-leader replies (any reply
    /// also proves the leader's own append: entries originate there).
    fn fast_proven(&self, t: &CoTxnState, shard: ShardId) -> bool {
        let mut proven = t.replies.get(&shard).cloned().unwrap_or_default();
        if t.leader_evidence.contains(&shard) {
            proven.insert(self.leader_dc_of(shard));
        }
        proven.len() >= self.topology.shard(shard).quorum()
    }

    fn shard_replication_ok(&self, t: &CoTxnState, shard: ShardId) -> bool {
        t.slow_complete.contains(&shard) || self.fast_proven(t, shard)
    }

    fn leader_dc_of(&self, shard: ShardId) -> DcId {
        // Replication evidence proves the copy of whichever leader produced
        // the entry; placement comes from the static topology (reassignment
        // re-reports through slow_complete instead).
        self.topology.shard(shard).leader
    }

    fn try_final(&mut self, net: &mut Kernel<Msg>, routing: &Routing, tid: TxnId) {
        let t = self.txns.get(&tid).expect("txn state");
        if !t.is_correspondent || t.final_decision.is_some() {
            return;
        }
        if let Some((vote_abort, reason)) =
            t.votes.values().find(|(v, _)| *v == Vote::Abort).copied()
        {
            let _ = vote_abort;
            self.decide(net, routing, tid, Decision::Abort, reason, DecisionPath::Fast);
            return;
        }
        let Some(list) = t.shard_list.clone() else { return };
        let all_voted = list.iter().all(|s| matches!(t.votes.get(s), Some((Vote::Commit, _))));
        if !all_voted {
            return;
        }
        let mut used_slow = false;
        for s in &list {
            let fast = self.fast_proven(t, *s);
            let slow = t.slow_complete.contains(s);
            if !fast && !slow {
                return;
            }
            if !fast {
                used_slow = true;
            }
        }
        let path = if used_slow { DecisionPath::Slow } else { DecisionPath::Fast };
        self.txns.get_mut(&tid).unwrap().used_slow_evidence = used_slow;
        self.decide(net, routing, tid, Decision::Commit, None, path);
    }

    /// Commits the decision: client first (intra-datacenter, the commit point
    /// for latency), then staged off-path dissemination — decision
    /// replication to the co-coordinator group, then participant leaders.
    fn decide(
        &mut self,
        net: &mut Kernel<Msg>,
        _routing: &Routing,
        tid: TxnId,
        decision: Decision,
        reason: Option<AbortReason>,
        path: DecisionPath,
    ) {
        let me = self.me;
        let my_dc = self.dc;
        let step = self.cfg.dissemination_step;
        let peer_count = self.peers().len() as u64;
        let t = self.txns.get_mut(&tid).expect("txn state");
        assert!(t.final_decision.is_none());
        t.final_decision = Some((decision, reason));
        let client = t.client.expect("correspondent knows its client");
        net.trace.push(TraceEvent::DecisionMade { at: net.now(), tid, decision, by: me, path });
        debug_assert_eq!(client.dc(), my_dc, "correspondent co-locates with the client");
        net.send_local(me, client, Msg::FinalDecision { tid, decision, reason });
        // Off-path dissemination happens one message per step, so a crash in
        // the middle leaves some co-coordinators informed and others not —
        // exactly the partial-dissemination failure mode recovery handles.
        for stage in 1..=(peer_count + 1) {
            net.timer(me, step * stage, Msg::Timer(TimerKind::Disseminate { tid, stage: stage as u8 }));
        }
    }

    fn on_decision_replicate(
        &mut self,
        net: &mut Kernel<Msg>,
        routing: &Routing,
        from: NodeId,
        tid: TxnId,
        decision: Decision,
        reason: Option<AbortReason>,
        shard_list: Vec<ShardId>,
    ) {
        let me = self.me;
        let t = self.txns.entry(tid).or_default();
        if let Some((prev, _)) = t.final_decision {
            assert_eq!(prev, decision, "decision uniqueness violated for {tid}");
        }
        t.final_decision = Some((decision, reason));
        t.shard_list.get_or_insert(shard_list.clone());
        net.send(me, from, Msg::DecisionAck { tid, from_dc: self.dc });
        // Co-located leaders can conclude even if the correspondent dies
        // before its own leader notifications go out.
        for shard in shard_list {
            if routing.leader_dc(shard) == self.dc {
                net.send_local(
                    me,
                    routing.leader_node(shard),
                    Msg::FinalDecision { tid, decision, reason },
                );
            }
        }
    }

    fn on_decision_ack(&mut self, tid: TxnId, from_dc: DcId) {
        let majority = self.group_majority();
        let t = self.txns.entry(tid).or_default();
        t.decision_acks.insert(from_dc);
        // Self counts: the correspondent holds the decision too.
        if t.decision_acks.len() + 1 >= majority {
            t.fault_tolerant = true;
        }
    }

    // ------------------------------------------------------------------
    // Timers: dissemination stages, failure detection, recovery
    // ------------------------------------------------------------------

    fn on_timer(&mut self, net: &mut Kernel<Msg>, routing: &Routing, kind: TimerKind) {
        match kind {
            TimerKind::Disseminate { tid, stage } => self.disseminate(net, routing, tid, stage),
            TimerKind::AwaitDecision { tid } => self.on_await_timeout(net, routing, tid),
            TimerKind::RecoveryWindow { tid } => self.on_recovery_window(net, routing, tid),
            TimerKind::ProbeWindow { tid } => self.on_probe_window(net, routing, tid),
            TimerKind::TerminationRetry { tid } => self.retry_termination(net, routing, tid),
            other => panic!("cocoord {}: unexpected timer {other:?}", self.me),
        }
    }

    fn disseminate(&mut self, net: &mut Kernel<Msg>, routing: &Routing, tid: TxnId, stage: u8) {
        let me = self.me;
        let peers = self.peers();
        let t = self.txns.get(&tid).expect("txn state");
        let Some((decision, reason)) = t.final_decision else { return };
        let shard_list = t.shard_list.clone().unwrap_or_default();
        let stage = stage as usize;
        if stage >= 1 && stage <= peers.len() {
            net.send(
                me,
                peers[stage - 1],
                Msg::DecisionReplicate { tid, decision, reason, shard_list },
            );
        } else if stage == peers.len() + 1 {
            for shard in shard_list {
                let leader = routing.leader_node(shard);
                if leader.dc() == self.dc {
                    net.send_local(me, leader, Msg::FinalDecision { tid, decision, reason });
                } else {
                    net.send(me, leader, Msg::FinalDecision { tid, decision, reason });
                }
            }
        } else {
            panic!("unknown dissemination stage {stage}");
        }
    }

    fn on_await_timeout(&mut self, net: &mut Kernel<Msg>, _routing: &Routing, tid: TxnId) {
        let me = self.me;
        let my_dc = self.dc;
        let window = self.cfg.response_window;
        let peers = self.peers();
        let (is_corr, shard_list) = {
            let t = self.txns.get_mut(&tid).expect("txn state");
            t.await_timer_armed = false;
            if t.final_decision.is_some() {
                return;
            }
            if t.is_correspondent {
                t.probing = true;
                t.probe_acks.clear();
            } else {
                t.recovery.started = true;
                t.recovery.responders.clear();
            }
            (t.is_correspondent, t.shard_list.clone())
        };
        if is_corr {
            // The decision is ours to make; probe whether a stalled shard
            // can still assemble a quorum.
            let Some(list) = shard_list else { return };
            for shard in list {
                let ok = self.shard_replication_ok(&self.txns[&tid], shard);
                if ok {
                    continue;
                }
                for &dc in &self.topology.shard(shard).replicas {
                    net.send(me, NodeId::Replica { shard, dc }, Msg::ProbeReplicas { tid, shard });
                }
            }
            net.timer(me, window, Msg::Timer(TimerKind::ProbeWindow { tid }));
        } else {
            // Correspondent silent for too long: query the group for the
            // decision (Case 1), falling back to termination (Case 2).
            for peer in peers {
                net.send(me, peer, Msg::RecoveryQuery { tid, from_dc: my_dc });
            }
            net.timer(me, window, Msg::Timer(TimerKind::RecoveryWindow { tid }));
        }
    }

    fn rearm_await(&mut self, net: &mut Kernel<Msg>, tid: TxnId) {
        let me = self.me;
        let timeout = self.cfg.recovery_timeout;
        let t = self.txns.get_mut(&tid).expect("txn state");
        if !t.await_timer_armed && t.final_decision.is_none() {
            t.await_timer_armed = true;
            net.timer(me, timeout, Msg::Timer(TimerKind::AwaitDecision { tid }));
        }
    }

    fn on_probe_window(&mut self, net: &mut Kernel<Msg>, routing: &Routing, tid: TxnId) {
        let t = self.txns.get(&tid).expect("txn state");
        if t.final_decision.is_some() || !t.probing {
            return;
        }
        let Some(list) = t.shard_list.clone() else { return };
        for shard in &list {
            if self.shard_replication_ok(t, *shard) {
                continue;
            }
            let alive = t.probe_acks.get(shard).map_or(0, |s| s.len());
            if alive < self.topology.shard(*shard).quorum() {
                // Majority of the shard's replicas are gone: replication can
                // never finish, so even a precommitted transaction aborts.
                self.decide(
                    net,
                    routing,
                    tid,
                    Decision::Abort,
                    Some(AbortReason::ReplicationFailure),
                    DecisionPath::Slow,
                );
                return;
            }
        }
        // Quorums are still possible (for example a leader is awaiting
        // oracle reassignment); keep waiting.
        self.txns.get_mut(&tid).unwrap().probing = false;
        self.rearm_await(net, tid);
    }

    fn on_recovery_window(&mut self, net: &mut Kernel<Msg>, routing: &Routing, tid: TxnId) {
        let me = self.me;
        let t = self.txns.get_mut(&tid).expect("txn state");
        if t.final_decision.is_some() || !t.recovery.started {
            return;
        }
        // Case 1: someone saw the decision; adopt and disseminate it.
        let known = t.recovery.responders.values().flatten().next().copied();
        if let Some((decision, reason)) = known {
            t.final_decision = Some((decision, reason));
            net.trace.push(TraceEvent::DecisionMade {
                at: net.now(),
                tid,
                decision,
                by: me,
                path: DecisionPath::RecoveredDecision,
            });
            self.disseminate_recovered(net, routing, tid, decision, reason);
            return;
        }
        // Case 2: nobody has it. The surviving co-coordinator in the lowest
        // datacenter runs the termination protocol.
        let mut alive: Vec<DcId> = t.recovery.responders.keys().copied().collect();
        alive.push(self.dc);
        let elected = alive.into_iter().min().expect("self responds");
        if elected != self.dc {
            t.recovery.started = false;
            self.rearm_await(net, tid);
            return;
        }
        t.recovery.terminating = true;
        self.retry_termination(net, routing, tid);
    }

    /// Queries every participant leader for vote and replication result;
    /// re-sent periodically so a crashed leader's oracle replacement also
    /// answers.
    fn retry_termination(&mut self, net: &mut Kernel<Msg>, routing: &Routing, tid: TxnId) {
        let me = self.me;
        let timeout = self.cfg.recovery_timeout;
        let t = self.txns.get(&tid).expect("txn state");
        if t.final_decision.is_some() || !t.recovery.terminating {
            return;
        }
        let Some(list) = t.shard_list.clone() else { return };
        for shard in list {
            if t.recovery.term_votes.contains_key(&shard) {
                continue;
            }
            net.send(
                me,
                routing.leader_node(shard),
                Msg::TerminationQuery { tid, shard, from: me },
            );
        }
        net.timer(me, timeout, Msg::Timer(TimerKind::TerminationRetry { tid }));
    }

    fn on_termination_reply(
        &mut self,
        net: &mut Kernel<Msg>,
        routing: &Routing,
        tid: TxnId,
        shard: ShardId,
        vote: Vote,
        reason: Option<AbortReason>,
        replication_complete: bool,
    ) {
        let me = self.me;
        let t = self.txns.get_mut(&tid).expect("txn state");
        if t.final_decision.is_some() || !t.recovery.terminating {
            return;
        }
        t.recovery.term_votes.insert(shard, (vote, reason, replication_complete));
        let Some(list) = t.shard_list.clone() else { return };
        let abort =
            t.recovery.term_votes.values().find(|(v, _, _)| *v == Vote::Abort).copied();
        let all = list.iter().all(|s| t.recovery.term_votes.contains_key(s));
        let complete = list.iter().all(|s| {
            t.recovery.term_votes.get(s).is_some_and(|(_, _, c)| *c)
        });
        let (decision, reason) = if let Some((_, r, _)) = abort {
            (Decision::Abort, r)
        } else if all && complete {
            (Decision::Commit, None)
        } else {
            return;
        };
        t.final_decision = Some((decision, reason));
        net.trace.push(TraceEvent::DecisionMade {
            at: net.now(),
            tid,
            decision,
            by: me,
            path: DecisionPath::Termination,
        });
        self.disseminate_recovered(net, routing, tid, decision, reason);
    }

    /// Recovery dissemination happens in one burst: the original client, all
    /// participant leaders, and every surviving co-coordinator.
    fn disseminate_recovered(
        &mut self,
        net: &mut Kernel<Msg>,
        routing: &Routing,
        tid: TxnId,
        decision: Decision,
        reason: Option<AbortReason>,
    ) {
        let me = self.me;
        let peers = self.peers();
        let t = self.txns.get(&tid).expect("txn state");
        let shard_list = t.shard_list.clone().unwrap_or_default();
        if let Some(client) = t.client {
            if client.dc() == self.dc {
                net.send_local(me, client, Msg::FinalDecision { tid, decision, reason });
            } else {
                net.send(me, client, Msg::FinalDecision { tid, decision, reason });
            }
        }
        for shard in &shard_list {
            let leader = routing.leader_node(*shard);
            if leader.dc() == self.dc {
                net.send_local(me, leader, Msg::FinalDecision { tid, decision, reason });
            } else {
                net.send(me, leader, Msg::FinalDecision { tid, decision, reason });
            }
        }
        for peer in peers {
            net.send(
                me,
                peer,
                Msg::DecisionReplicate { tid, decision, reason, shard_list: shard_list.clone() },
            );
        }
    }
}
