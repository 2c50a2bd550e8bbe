//! Deterministic discrete-event simulation kernel.
//!
//! The kernel owns a virtual clock, the pending-event queue, node liveness,
//! and the run trace. Node behavior lives behind the [`World`] trait; the
//! kernel knows nothing about message contents.
//!
//! Determinism rules:
//! - events fire in `(fire_at, seq)` order, where `seq` is the monotone
//!   scheduling sequence number, so ties resolve by scheduling order;
//! - a fixed `(topology, schedule, seed)` input yields a byte-identical
//!   trace on every run;
//! - message delay between two nodes is half the RTT between their
//!   datacenters (the diagonal for co-located nodes, never zero), while
//!   [`Kernel::send_local`] models co-located notification delivery that
//!   costs no network time and is ordered purely by `seq`.
//!
//! Crash semantics: a crashed node emits nothing and receives nothing until
//! it recovers; deliveries due while the target is down are dropped. Messages
//! already in flight from a node that later crashes are still delivered.

use crate::error::ConfigError;
use crate::time::SimTime;
use crate::topology::{DcId, LatencyMatrix, NodeId, ShardId};
use crate::trace::{Trace, TraceEvent};
use serde::{Deserialize, Serialize};
use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;

/// Oracle-driven failure actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaultAction {
    Crash,
    Recover,
    ReassignLeader { shard: ShardId, new_leader: DcId },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureEntry {
    pub at: SimTime,
    pub node: NodeId,
    pub action: FaultAction,
}

/// A time-sorted list of crash/recover/reassign actions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureSchedule {
    pub entries: Vec<FailureEntry>,
}

impl FailureSchedule {
    pub fn new(entries: Vec<FailureEntry>) -> Result<FailureSchedule, ConfigError> {
        for w in entries.windows(2) {
            if w[1].at < w[0].at {
                return Err(ConfigError::FailureSchedule("entries not sorted by time".into()));
            }
        }
        // A node must crash before it can recover, and crash/recover alternate.
        let mut down: BTreeMap<NodeId, bool> = BTreeMap::new();
        for e in &entries {
            match e.action {
                FaultAction::Crash => {
                    if *down.get(&e.node).unwrap_or(&false) {
                        return Err(ConfigError::FailureSchedule(format!(
                            "{} crashes while already crashed",
                            e.node
                        )));
                    }
                    down.insert(e.node, true);
                }
                FaultAction::Recover => {
                    if !*down.get(&e.node).unwrap_or(&false) {
                        return Err(ConfigError::FailureSchedule(format!(
                            "{} recovers before crashing",
                            e.node
                        )));
                    }
                    down.insert(e.node, false);
                }
                FaultAction::ReassignLeader { .. } => {}
            }
        }
        Ok(FailureSchedule { entries })
    }
}

enum Payload<M> {
    Msg { from: NodeId, msg: M },
    /// Local notification or timer: delivered even at the instant it was
    /// scheduled, ordered by seq.
    Local { from: NodeId, msg: M },
    Fault(FaultAction),
}

struct Event<M> {
    fire_at: SimTime,
    seq: u64,
    target: NodeId,
    payload: Payload<M>,
}

impl<M> PartialEq for Event<M> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}
impl<M> Eq for Event<M> {}
impl<M> PartialOrd for Event<M> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<M> Ord for Event<M> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.fire_at, self.seq).cmp(&(other.fire_at, other.seq))
    }
}

/// When `run` should stop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopCondition {
    /// Run until no events remain.
    Quiescence,
    /// Drain events up to and including this time, then stop.
    At(SimTime),
}

/// Node behavior plugged into the kernel.
pub trait World {
    type Msg: fmt::Debug;

    fn deliver(
        &mut self,
        net: &mut Kernel<Self::Msg>,
        to: NodeId,
        from: NodeId,
        msg: Self::Msg,
    );

    /// Volatile state of `node` is gone; durable state survives.
    fn on_crash(&mut self, _net: &mut Kernel<Self::Msg>, _node: NodeId) {}

    fn on_recover(&mut self, _net: &mut Kernel<Self::Msg>, _node: NodeId) {}

    fn on_reassign_leader(
        &mut self,
        _net: &mut Kernel<Self::Msg>,
        _shard: ShardId,
        _new_leader: DcId,
    ) {
    }
}

pub struct Kernel<M> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Reverse<Event<M>>>,
    matrix: LatencyMatrix,
    /// Extra delay charged on every message a node emits. Zero by default so
    /// measured latencies match the analytic model exactly.
    pub processing_delay: SimTime,
    alive: BTreeMap<NodeId, bool>,
    pub trace: Trace,
    events_processed: u64,
}

impl<M: fmt::Debug> Kernel<M> {
    pub fn new(matrix: LatencyMatrix, record_messages: bool) -> Kernel<M> {
        Kernel {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            matrix,
            processing_delay: SimTime::ZERO,
            alive: BTreeMap::new(),
            trace: Trace::new(record_messages),
            events_processed: 0,
        }
    }

    pub fn register(&mut self, node: NodeId) {
        let prev = self.alive.insert(node, true);
        assert!(prev.is_none(), "node {node} registered twice");
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn matrix(&self) -> &LatencyMatrix {
        &self.matrix
    }

    pub fn is_alive(&self, node: NodeId) -> bool {
        *self.alive.get(&node).unwrap_or_else(|| panic!("unknown node {node}"))
    }

    pub fn events_processed(&self) -> u64 {
        self.events_processed
    }

    /// Network delay of one message between two nodes: half the RTT between
    /// their datacenters. Never zero, even node-to-self.
    pub fn one_way_delay(&self, from: NodeId, to: NodeId) -> SimTime {
        self.matrix.one_way(from.dc(), to.dc())
    }

    fn enqueue(&mut self, fire_at: SimTime, target: NodeId, payload: Payload<M>) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Event { fire_at, seq, target, payload }));
    }

    /// Schedules a network message. Per ordered `(from, to)` pair delivery
    /// order equals send order: the delay is fixed per pair and ties fall
    /// back to `seq`.
    pub fn send(&mut self, from: NodeId, to: NodeId, msg: M) {
        assert!(self.is_alive(from), "crashed node {from} attempted to send {msg:?}");
        assert!(self.alive.contains_key(&to), "send to unknown node {to}");
        let at = self.now + self.processing_delay + self.one_way_delay(from, to);
        self.enqueue(at, to, Payload::Msg { from, msg });
    }

    /// Schedules a co-located notification: zero network delay, delivered at
    /// the current instant after everything already queued for it. Both ends
    /// must sit in the same datacenter.
    pub fn send_local(&mut self, from: NodeId, to: NodeId, msg: M) {
        assert!(self.is_alive(from), "crashed node {from} attempted to send {msg:?}");
        assert!(self.alive.contains_key(&to), "send to unknown node {to}");
        assert_eq!(from.dc(), to.dc(), "send_local between {from} and {to}");
        let at = self.now + self.processing_delay;
        self.enqueue(at, to, Payload::Local { from, msg });
    }

    /// Schedules a message from a node to itself after `delay`. Dropped like
    /// any delivery if the node is down when it fires.
    pub fn timer(&mut self, node: NodeId, delay: SimTime, msg: M) {
        assert!(self.alive.contains_key(&node), "timer for unknown node {node}");
        self.enqueue(self.now + delay, node, Payload::Local { from: node, msg });
    }

    /// Loads a failure schedule. Call before `run` so that fault events win
    /// seq tie-breaks against same-instant message deliveries.
    pub fn load_failures(&mut self, schedule: &FailureSchedule) {
        for e in &schedule.entries {
            assert!(
                self.alive.contains_key(&e.node),
                "failure schedule names unknown node {}",
                e.node
            );
            self.enqueue(e.at, e.node, Payload::Fault(e.action));
        }
    }

    fn msg_label(msg: &M) -> String {
        let s = format!("{msg:?}");
        s.split(|c| c == ' ' || c == '(' || c == '{').next().unwrap_or("?").to_string()
    }

    /// Drives the world until quiescence or the stop time. Returns the time
    /// of the last processed event.
    pub fn run<W: World<Msg = M>>(&mut self, world: &mut W, stop: StopCondition) -> SimTime {
        while let Some(Reverse(head)) = self.queue.peek() {
            if let StopCondition::At(t) = stop {
                if head.fire_at > t {
                    break;
                }
            }
            let Reverse(ev) = self.queue.pop().expect("peeked");
            debug_assert!(ev.fire_at >= self.now, "causality violated");
            self.now = ev.fire_at;
            self.events_processed += 1;
            match ev.payload {
                Payload::Fault(action) => self.apply_fault(world, ev.target, action),
                Payload::Msg { from, msg } | Payload::Local { from, msg } => {
                    if !self.is_alive(ev.target) {
                        self.trace.push_message(TraceEvent::Dropped {
                            at: self.now,
                            from,
                            to: ev.target,
                            msg: Self::msg_label(&msg),
                        });
                        continue;
                    }
                    self.trace.push_message(TraceEvent::Delivered {
                        at: self.now,
                        from,
                        to: ev.target,
                        msg: Self::msg_label(&msg),
                    });
                    world.deliver(self, ev.target, from, msg);
                }
            }
        }
        self.now
    }

    fn apply_fault<W: World<Msg = M>>(&mut self, world: &mut W, node: NodeId, action: FaultAction) {
        match action {
            FaultAction::Crash => {
                self.alive.insert(node, false);
                self.trace.push(TraceEvent::Crashed { at: self.now, node });
                world.on_crash(self, node);
            }
            FaultAction::Recover => {
                self.alive.insert(node, true);
                self.trace.push(TraceEvent::Recovered { at: self.now, node });
                world.on_recover(self, node);
            }
            FaultAction::ReassignLeader { shard, new_leader } => {
                self.trace.push(TraceEvent::LeaderReassigned { at: self.now, shard, new_leader });
                world.on_reassign_leader(self, shard, new_leader);
            }
        }
    }
}
