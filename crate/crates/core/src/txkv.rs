//! Per-shard versioned key-value store with pluggable concurrency control.
//!
//! Each shard leader owns one `TxnStore` driving the transaction lifecycle
//! `Executed -> Prepared -> PreCommit -> Commit/Abort` (with the slow-path
//! shortcut `Prepared -> Commit` and abort arrows out of every live state).
//!
//! Early write visibility: once a transaction precommits, its buffered writes
//! become readable through the per-tuple precommit list while the final
//! commit is still in flight. Readers of such writes record a wr dependency
//! through the register-and-report counters (`in_counter` / `out_list`):
//! a leader withholds a Commit vote while `in_counter > 0`, and an abort of
//! the writer cascade-aborts every recorded reader (`in_counter = -1`).
//! Precommitted values never land in place, so aborts need no undo log.
//!
//! Concurrency control is either OCC (backward read-version validation plus
//! write-intent conflicts at prepare time) or 2PL with wait-die deadlock
//! avoidance (a requester dies unless it is older than everything it would
//! wait behind; queued requests are granted in timestamp order).

use crate::time::SimTime;
use crate::topology::ShardId;
use crate::types::{AbortReason, CcMode, Decision, Key, ReadVersion, TxnId, Value, Version, Vote};
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Wait-die age: assigned when a transaction chain first begins and kept
/// across retries, so a restarted transaction keeps aging and cannot starve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct TxnTs {
    pub begin: SimTime,
    pub root: TxnId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxnState {
    Executed,
    Prepared,
    PreCommit,
    Committed,
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LockMode {
    Shared,
    Exclusive,
}

#[derive(Debug, Clone, Copy)]
struct LockWaiter {
    ts: TxnTs,
    tid: TxnId,
    mode: LockMode,
    /// Prepare-phase locks complete the vote when the last one lands;
    /// execution-phase shared locks complete a pending read.
    for_prepare: bool,
}

#[derive(Debug, Default)]
struct LockState {
    shared: Vec<TxnId>,
    exclusive: Option<TxnId>,
    /// Pending requests, kept sorted by wait-die timestamp (oldest first).
    queue: Vec<LockWaiter>,
}

impl LockState {
    fn is_free_for(&self, tid: TxnId, mode: LockMode) -> bool {
        match mode {
            LockMode::Shared => self.exclusive.is_none() || self.exclusive == Some(tid),
            LockMode::Exclusive => {
                self.exclusive.map_or(true, |h| h == tid)
                    && self.shared.iter().all(|&h| h == tid)
            }
        }
    }

    fn incompatible_holders(&self, tid: TxnId, mode: LockMode) -> Vec<TxnId> {
        let mut out = Vec::new();
        match mode {
            LockMode::Shared => {
                if let Some(h) = self.exclusive {
                    if h != tid {
                        out.push(h);
                    }
                }
            }
            LockMode::Exclusive => {
                if let Some(h) = self.exclusive {
                    if h != tid {
                        out.push(h);
                    }
                }
                out.extend(self.shared.iter().copied().filter(|&h| h != tid));
            }
        }
        out
    }

    fn grant(&mut self, tid: TxnId, mode: LockMode) {
        match mode {
            LockMode::Shared => {
                if !self.shared.contains(&tid) {
                    self.shared.push(tid);
                }
            }
            LockMode::Exclusive => {
                // Upgrade drops the shared slot.
                self.shared.retain(|&h| h != tid);
                self.exclusive = Some(tid);
            }
        }
    }
}

#[derive(Debug, Default)]
struct Tuple {
    /// Committed versions, ascending by version; only a short tail is
    /// retained. Versions may have gaps where a reservation aborted.
    versions: Vec<(Version, Value, TxnId)>,
    /// Highest version number ever reserved for this key. Writers reserve
    /// their slot when they precommit, so version order equals precommit
    /// order even when final decisions land out of order.
    reserved_high: Version,
    /// Transactions in PreCommit state that wrote this key, in precommit
    /// order, each with the version slot it reserved.
    precommit: Vec<(TxnId, Version)>,
    /// OCC: prepared-but-undecided writer holding a validation intent.
    intent: Option<TxnId>,
    /// OCC: prepared-but-undecided readers of this key. A new writer must
    /// not slip past them, or concurrent validations on different shards
    /// could serialize in opposite orders (cross-shard write skew).
    readers: Vec<TxnId>,
    lock: LockState,
}

impl Tuple {
    fn head(&self) -> (Version, Value, Option<TxnId>) {
        match self.versions.last() {
            Some(&(v, val, tid)) => (v, val, Some(tid)),
            None => (0, 0, None),
        }
    }
}

#[derive(Debug)]
pub struct TxnRecord {
    pub tid: TxnId,
    pub ts: TxnTs,
    pub state: TxnState,
    pub rset: Vec<(Key, ReadVersion)>,
    pub wset: Vec<(Key, Value)>,
    /// Number of uncommitted precommitted transactions this one has read;
    /// -1 marks it for cascade abort.
    pub in_counter: i64,
    /// Transactions that read this transaction's precommitted writes.
    pub out_list: Vec<TxnId>,
    pub vote: Option<Vote>,
    /// Vote computed but deliberately not released while `in_counter > 0`.
    pub withheld: bool,
    pub abort_reason: Option<AbortReason>,
    read_locks: Vec<Key>,
    write_locks: Vec<Key>,
    intents: Vec<Key>,
    /// OCC: keys whose tuples record this txn as a prepared reader.
    read_marks: Vec<Key>,
    /// Version slots reserved at precommit, one per written key.
    reserved: Vec<(Key, Version)>,
    /// Write locks still queued during a 2PL prepare.
    pending_locks: usize,
    read_opt_prepare: bool,
    ccp_start: Option<SimTime>,
    ccp_end: Option<SimTime>,
    entered_prepared: bool,
}

impl TxnRecord {
    fn new(tid: TxnId, ts: TxnTs) -> TxnRecord {
        TxnRecord {
            tid,
            ts,
            state: TxnState::Executed,
            rset: Vec::new(),
            wset: Vec::new(),
            in_counter: 0,
            out_list: Vec::new(),
            vote: None,
            withheld: false,
            abort_reason: None,
            read_locks: Vec::new(),
            write_locks: Vec::new(),
            intents: Vec::new(),
            read_marks: Vec::new(),
            reserved: Vec::new(),
            pending_locks: 0,
            read_opt_prepare: false,
            ccp_start: None,
            ccp_end: None,
            entered_prepared: false,
        }
    }
}

/// Observable consequences of a store call, translated into messages and
/// trace records by the owning replica.
#[derive(Debug, PartialEq, Eq)]
pub enum StoreEvent {
    WrDependency { reader: TxnId, writer: TxnId, key: Key },
    Installed { key: Key, version: Version, value: Value, tid: TxnId },
    /// A withheld Commit vote became releasable (`in_counter` hit 0).
    VoteReleased { tid: TxnId },
    /// The transaction was cascade-aborted because a writer it read aborted.
    /// `announce` is set when a vote for it had already been computed, so the
    /// leader must now broadcast an Abort vote in its place.
    CascadeAborted { tid: TxnId, announce: bool },
    /// A queued read acquired its lock; the reply can be served now.
    ReadGranted { tid: TxnId, key: Key },
    /// An older transaction wounded this still-executing one; its client
    /// must restart the attempt.
    ExecutionWounded { tid: TxnId },
    /// A 2PL prepare finished waiting for its write locks.
    PrepareReady { tid: TxnId, vote: Vote, withheld: bool, reason: Option<AbortReason> },
    CcpClosed { tid: TxnId, start: SimTime, end: SimTime },
}

#[derive(Debug, PartialEq, Eq)]
pub enum ReadOutcome {
    Ready { value: Value, version: ReadVersion, dep_recorded: bool },
    /// Queued behind a lock; a later `ReadGranted` event completes it.
    Waiting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrepareOutcome {
    Decided { vote: Vote, withheld: bool, reason: Option<AbortReason> },
    /// 2PL write locks queued; a later `PrepareReady` event carries the vote.
    Waiting,
}

pub struct TxnStore {
    pub shard: ShardId,
    pub mode: CcMode,
    shard_count: u64,
    tuples: BTreeMap<Key, Tuple>,
    txns: BTreeMap<TxnId, TxnRecord>,
    /// Versions retained per key; validation needs the head, debugging the tail.
    version_retention: usize,
}

impl TxnStore {
    pub fn new(shard: ShardId, shard_count: u64, mode: CcMode) -> TxnStore {
        TxnStore {
            shard,
            mode,
            shard_count,
            tuples: BTreeMap::new(),
            txns: BTreeMap::new(),
            version_retention: 2,
        }
    }

    pub fn txn(&self, tid: TxnId) -> Option<&TxnRecord> {
        self.txns.get(&tid)
    }

    pub fn txn_state(&self, tid: TxnId) -> Option<TxnState> {
        self.txns.get(&tid).map(|r| r.state)
    }

    fn owns(&self, key: Key) -> bool {
        key % self.shard_count == self.shard.0 as u64
    }

    fn record(&mut self, tid: TxnId, ts: TxnTs) -> &mut TxnRecord {
        self.txns.entry(tid).or_insert_with(|| TxnRecord::new(tid, ts))
    }

    // ------------------------------------------------------------------
    // Read path
    // ------------------------------------------------------------------

    /// Leader read. With `acquire_lock` (2PL execution reads and the
    /// enforced second execution) the read first takes a shared lock and may
    /// wait or die. Reads against a non-empty precommit list return the last
    /// precommitted writer's buffered value and record the wr dependency.
    pub fn read_leader(
        &mut self,
        now: SimTime,
        tid: TxnId,
        ts: TxnTs,
        key: Key,
        acquire_lock: bool,
        events: &mut Vec<StoreEvent>,
    ) -> ReadOutcome {
        assert!(self.owns(key), "key {key} not owned by shard {}", self.shard);
        self.record(tid, ts);
        if acquire_lock {
            debug_assert_eq!(self.mode, CcMode::TwoPl);
            match self.try_lock(now, tid, ts, key, LockMode::Shared, events) {
                LockAttempt::Granted => {}
                LockAttempt::Waiting => return ReadOutcome::Waiting,
            }
        }
        let (value, version, dep) = self.serve_read(tid, key, events);
        ReadOutcome::Ready { value, version, dep_recorded: dep }
    }

    /// Serves a read whose shared lock was just granted from the wait queue.
    pub fn complete_read(
        &mut self,
        tid: TxnId,
        key: Key,
        events: &mut Vec<StoreEvent>,
    ) -> (Value, ReadVersion, bool) {
        self.serve_read(tid, key, events)
    }

    /// Follower read: latest committed version only, no dependency tracking.
    pub fn read_follower(&self, key: Key) -> (Value, Version) {
        match self.tuples.get(&key) {
            Some(t) => {
                let (v, val, _) = t.head();
                (val, v)
            }
            None => (0, 0),
        }
    }

    fn serve_read(
        &mut self,
        tid: TxnId,
        key: Key,
        events: &mut Vec<StoreEvent>,
    ) -> (Value, ReadVersion, bool) {
        // The freshest value is the last precommitted write only while its
        // reserved slot is ahead of the committed head: a later writer that
        // stacked above it may already have committed out of order.
        let writer = self.tuples.get(&key).and_then(|t| {
            let (head_v, _, _) = t.head();
            t.precommit.last().copied().filter(|&(_, slot)| slot > head_v).map(|(w, _)| w)
        });
        match writer {
            Some(writer) if writer != tid => {
                // Depend only on the last entry: the value actually read.
                let value = self
                    .txns
                    .get(&writer)
                    .and_then(|w| w.wset.iter().find(|(k, _)| *k == key))
                    .map(|(_, v)| *v)
                    .expect("precommit list entry has a buffered write for the key");
                let w = self.txns.get_mut(&writer).expect("precommitted writer record");
                w.out_list.push(tid);
                let r = self.txns.get_mut(&tid).expect("reader record");
                if r.in_counter >= 0 {
                    r.in_counter += 1;
                }
                events.push(StoreEvent::WrDependency { reader: tid, writer, key });
                (value, ReadVersion::Pending(writer), true)
            }
            _ => {
                let (v, val, _) = self.tuples.get(&key).map(|t| t.head()).unwrap_or((0, 0, None));
                (val, ReadVersion::Committed(v), false)
            }
        }
    }

    // ------------------------------------------------------------------
    // Prepare
    // ------------------------------------------------------------------

    /// Validates the transaction and computes its vote. Idempotent for
    /// duplicate prepares: returns the recorded vote.
    pub fn prepare(
        &mut self,
        now: SimTime,
        tid: TxnId,
        ts: TxnTs,
        rset: Vec<(Key, ReadVersion)>,
        wset: Vec<(Key, Value)>,
        read_opt: bool,
        events: &mut Vec<StoreEvent>,
    ) -> PrepareOutcome {
        #[cfg(debug_assertions)]
        {
            for (k, _) in &rset {
                debug_assert!(self.owns(*k));
            }
            for (k, _) in &wset {
                debug_assert!(self.owns(*k));
            }
        }
        if let Some(r) = self.txns.get(&tid) {
            if let Some(vote) = r.vote {
                return PrepareOutcome::Decided {
                    vote,
                    withheld: r.withheld,
                    reason: r.abort_reason,
                };
            }
            if r.state == TxnState::Aborted {
                return PrepareOutcome::Decided {
                    vote: Vote::Abort,
                    withheld: false,
                    reason: r.abort_reason.or(Some(AbortReason::Cascade)),
                };
            }
        }
        let r = self.record(tid, ts);
        assert_eq!(r.state, TxnState::Executed, "prepare from a non-Executed state");
        r.rset = rset;
        r.wset = wset;
        r.read_opt_prepare = read_opt;
        if r.ccp_start.is_none() {
            // OCC and read-optimized 2PL start concurrency control here; plain
            // 2PL already started at the first execution-time read lock.
            r.ccp_start = Some(now);
        }
        r.entered_prepared = true;

        if r.in_counter == -1 {
            // Marked for cascade abort before it could prepare.
            return self.decide_abort(now, tid, AbortReason::Cascade, events);
        }

        match self.mode {
            CcMode::Occ => self.prepare_occ(now, tid, events),
            CcMode::TwoPl => self.prepare_2pl(now, tid, events),
        }
    }

    /// Backward validation against the current state plus certification
    /// against the validation list: conflicts with any prepared-undecided
    /// transaction (write-write on intents, write-read on recorded readers,
    /// read-write on intents) abort the later arrival. Without the
    /// list-based checks, two transactions validating on different shards
    /// can serialize in opposite orders.
    fn prepare_occ(
        &mut self,
        now: SimTime,
        tid: TxnId,
        events: &mut Vec<StoreEvent>,
    ) -> PrepareOutcome {
        if let Some(reason) = self.validate_reads(tid) {
            return self.decide_abort(now, tid, reason, events);
        }
        let wset: Vec<Key> = self.txns[&tid].wset.iter().map(|(k, _)| *k).collect();
        let rset: Vec<Key> = self.txns[&tid].rset.iter().map(|(k, _)| *k).collect();
        for &key in &rset {
            if let Some(t) = self.tuples.get(&key) {
                if t.intent.is_some_and(|holder| holder != tid) {
                    return self.decide_abort(now, tid, AbortReason::WriteConflict, events);
                }
            }
        }
        for &key in &wset {
            let t = self.tuples.entry(key).or_default();
            if t.intent.is_some_and(|holder| holder != tid) {
                return self.decide_abort(now, tid, AbortReason::WriteConflict, events);
            }
            if t.readers.iter().any(|&r| r != tid) {
                return self.decide_abort(now, tid, AbortReason::WriteConflict, events);
            }
        }
        for &key in &wset {
            self.tuples.get_mut(&key).expect("created above").intent = Some(tid);
            self.txns.get_mut(&tid).unwrap().intents.push(key);
        }
        for &key in &rset {
            let t = self.tuples.entry(key).or_default();
            if !t.readers.contains(&tid) {
                t.readers.push(tid);
            }
            self.txns.get_mut(&tid).unwrap().read_marks.push(key);
        }
        self.decide_commit_vote(tid)
    }

    fn prepare_2pl(
        &mut self,
        now: SimTime,
        tid: TxnId,
        events: &mut Vec<StoreEvent>,
    ) -> PrepareOutcome {
        // Reads done without locks (read optimization) are verified before
        // any lock is taken; stale readers abort without disturbing others.
        // The survivors then take read locks alongside the write locks so
        // their validated reads stay pinned until the decision.
        let read_opt = self.txns[&tid].read_opt_prepare;
        if read_opt {
            if let Some(reason) = self.validate_reads(tid) {
                return self.decide_abort(now, tid, reason, events);
            }
        }
        let ts = self.txns[&tid].ts;
        let wset: Vec<Key> = self.txns[&tid].wset.iter().map(|(k, _)| *k).collect();
        let mut locks: Vec<(Key, LockMode)> = wset.iter().map(|&k| (k, LockMode::Exclusive)).collect();
        if read_opt {
            for &(key, _) in &self.txns[&tid].rset.clone() {
                if !wset.contains(&key) {
                    locks.push((key, LockMode::Shared));
                }
            }
        }
        let mut waiting = 0usize;
        for &(key, mode) in &locks {
            match self.try_lock_for_prepare(now, tid, ts, key, mode, events) {
                LockAttempt::Granted => {}
                LockAttempt::Waiting => waiting += 1,
            }
        }
        if waiting > 0 {
            self.txns.get_mut(&tid).unwrap().pending_locks = waiting;
            return PrepareOutcome::Waiting;
        }
        self.finish_prepare_2pl(now, tid, events)
    }

    fn finish_prepare_2pl(
        &mut self,
        now: SimTime,
        tid: TxnId,
        events: &mut Vec<StoreEvent>,
    ) -> PrepareOutcome {
        // Re-validate after lock waits: an unlocked read key may have moved
        // while this prepare sat in a write-lock queue.
        if self.txns[&tid].read_opt_prepare {
            if let Some(reason) = self.validate_reads(tid) {
                return self.decide_abort(now, tid, reason, events);
            }
        }
        self.decide_commit_vote(tid)
    }

    fn decide_commit_vote(&mut self, tid: TxnId) -> PrepareOutcome {
        let r = self.txns.get_mut(&tid).unwrap();
        r.state = TxnState::Prepared;
        r.vote = Some(Vote::Commit);
        // The leader cannot release a Commit vote while transactions it read
        // from remain uncommitted; the vote is buffered, not turned into an
        // abort.
        r.withheld = r.in_counter > 0;
        PrepareOutcome::Decided { vote: Vote::Commit, withheld: r.withheld, reason: None }
    }

    fn decide_abort(
        &mut self,
        now: SimTime,
        tid: TxnId,
        reason: AbortReason,
        events: &mut Vec<StoreEvent>,
    ) -> PrepareOutcome {
        let r = self.txns.get_mut(&tid).unwrap();
        r.vote = Some(Vote::Abort);
        r.abort_reason = Some(reason);
        r.state = TxnState::Prepared;
        self.conclude(now, tid, Decision::Abort, events);
        PrepareOutcome::Decided { vote: Vote::Abort, withheld: false, reason: Some(reason) }
    }

    fn validate_reads(&self, tid: TxnId) -> Option<AbortReason> {
        let r = &self.txns[&tid];
        for &(key, version) in &r.rset {
            let t = self.tuples.get(&key);
            let (head_v, _, head_writer) = t.map(|t| t.head()).unwrap_or((0, 0, None));
            let pending_last = t.and_then(|t| {
                t.precommit.last().copied().filter(|&(_, slot)| slot > head_v).map(|(w, _)| w)
            });
            let ok = match version {
                // A committed read is current only if the head version still
                // matches and no fresher precommitted write is stacked.
                ReadVersion::Committed(v) => pending_last.is_none() && head_v == v,
                // A pending read stays valid while its writer remains the
                // freshest precommitted entry, or once that writer committed
                // and still owns the head version.
                ReadVersion::Pending(w) => match pending_last {
                    Some(last) => last == w,
                    None => head_writer == Some(w),
                },
            };
            if !ok {
                return Some(AbortReason::StaleRead);
            }
        }
        None
    }

    // ------------------------------------------------------------------
    // PreCommit
    // ------------------------------------------------------------------

    /// Applies the co-coordinator's PreCommit decision: concludes concurrency
    /// control, publishes buffered writes through the precommit lists, and
    /// releases every lock or intent. A decision racing behind an applied
    /// final Commit/Abort is a no-op.
    pub fn precommit(&mut self, now: SimTime, tid: TxnId, events: &mut Vec<StoreEvent>) -> bool {
        let Some(r) = self.txns.get_mut(&tid) else { return false };
        match r.state {
            TxnState::Committed | TxnState::Aborted => return false,
            TxnState::Prepared => {}
            s => panic!("precommit of {tid} in state {s:?}"),
        }
        assert_eq!(r.vote, Some(Vote::Commit), "precommit requires a Commit vote");
        r.state = TxnState::PreCommit;
        let wset: Vec<Key> = r.wset.iter().map(|(k, _)| *k).collect();
        let mut reserved = Vec::with_capacity(wset.len());
        for key in wset {
            let t = self.tuples.entry(key).or_default();
            let (head, _, _) = t.head();
            let slot = t.reserved_high.max(head) + 1;
            t.reserved_high = slot;
            t.precommit.push((tid, slot));
            reserved.push((key, slot));
        }
        self.txns.get_mut(&tid).unwrap().reserved = reserved;
        self.release_cc(now, tid, events);
        true
    }

    // ------------------------------------------------------------------
    // Final decision
    // ------------------------------------------------------------------

    /// Applies the final decision. Commit installs the buffered writes as new
    /// committed versions and lets dependents go (`in_counter -= 1`); Abort
    /// discards them and marks dependents for cascade abort
    /// (`in_counter = -1`). Duplicate identical decisions are no-ops;
    /// conflicting ones are protocol violations.
    pub fn apply_decision(
        &mut self,
        now: SimTime,
        tid: TxnId,
        decision: Decision,
        events: &mut Vec<StoreEvent>,
    ) {
        let Some(r) = self.txns.get(&tid) else {
            // Decision for a transaction this shard never prepared (e.g. a
            // recovery-path abort): record it defensively.
            let mut rec = TxnRecord::new(tid, TxnTs { begin: now, root: tid });
            rec.state = match decision {
                Decision::Commit => panic!("commit decision for unknown {tid}"),
                Decision::Abort => TxnState::Aborted,
            };
            self.txns.insert(tid, rec);
            return;
        };
        match (r.state, decision) {
            (TxnState::Committed, Decision::Commit) | (TxnState::Aborted, Decision::Abort) => {
                return; // duplicate delivery
            }
            (TxnState::Committed, Decision::Abort) | (TxnState::Aborted, Decision::Commit) => {
                panic!("conflicting decision {decision} for {tid}");
            }
            _ => {}
        }
        self.conclude(now, tid, decision, events);
    }

    fn conclude(
        &mut self,
        now: SimTime,
        tid: TxnId,
        decision: Decision,
        events: &mut Vec<StoreEvent>,
    ) {
        let r = self.txns.get_mut(&tid).unwrap();
        let out = std::mem::take(&mut r.out_list);
        let wset = r.wset.clone();
        let prior = r.state;
        r.state = match decision {
            Decision::Commit => TxnState::Committed,
            Decision::Abort => TxnState::Aborted,
        };
        // A concluded transaction has no vote left to release.
        r.withheld = false;

        // Register-and-report: settle dependents first.
        let mut cascades = Vec::new();
        for dep in out {
            let d = self.txns.get_mut(&dep).expect("dependent record");
            match decision {
                Decision::Commit => {
                    if d.in_counter > 0 {
                        d.in_counter -= 1;
                        if d.in_counter == 0 && d.withheld && d.state == TxnState::Prepared {
                            d.withheld = false;
                            events.push(StoreEvent::VoteReleased { tid: dep });
                        }
                    }
                }
                Decision::Abort => {
                    if d.in_counter != -1 {
                        d.in_counter = -1;
                        cascades.push(dep);
                    }
                }
            }
        }

        // Precommitted values never took effect in place, so abort is pure
        // bookkeeping and commit installs fresh versions under the slots
        // reserved at precommit time (slow-path commits reserve now); an
        // aborted reservation simply leaves a gap.
        let reserved = self.txns.get(&tid).map(|r| r.reserved.clone()).unwrap_or_default();
        for (key, value) in wset {
            let t = self.tuples.entry(key).or_default();
            t.precommit.retain(|&(p, _)| p != tid);
            if decision == Decision::Commit {
                let version = match reserved.iter().find(|(k, _)| *k == key) {
                    Some(&(_, slot)) => slot,
                    None => {
                        let (head, _, _) = t.head();
                        let slot = t.reserved_high.max(head) + 1;
                        t.reserved_high = slot;
                        slot
                    }
                };
                let pos = t.versions.partition_point(|&(v, _, _)| v < version);
                t.versions.insert(pos, (version, value, tid));
                if t.versions.len() > self.version_retention {
                    let drop = t.versions.len() - self.version_retention;
                    t.versions.drain(..drop);
                }
                events.push(StoreEvent::Installed { key, version, value, tid });
            }
        }

        if prior != TxnState::PreCommit {
            // Slow-path commit or an abort before any PreCommit arrived:
            // concurrency control concludes here.
            self.release_cc(now, tid, events);
        }

        for dep in cascades {
            let d = &self.txns[&dep];
            debug_assert!(
                d.state != TxnState::PreCommit && d.state != TxnState::Committed,
                "a precommitted transaction cannot be cascade-aborted: its vote \
                 required every writer it read to have committed"
            );
            let announce = d.vote.is_some() && d.state == TxnState::Prepared;
            if d.state == TxnState::Prepared {
                let d = self.txns.get_mut(&dep).unwrap();
                d.vote = Some(Vote::Abort);
                d.abort_reason = Some(AbortReason::Cascade);
                d.withheld = false;
                self.conclude(now, dep, Decision::Abort, events);
            } else {
                let d = self.txns.get_mut(&dep).unwrap();
                d.abort_reason = Some(AbortReason::Cascade);
            }
            events.push(StoreEvent::CascadeAborted { tid: dep, announce });
        }
    }

    // ------------------------------------------------------------------
    // Concurrency-control release
    // ------------------------------------------------------------------

    /// Releases every lock and validation intent held by `tid` and closes its
    /// concurrency-control window. Safe to call for unknown transactions.
    pub fn release_cc(&mut self, now: SimTime, tid: TxnId, events: &mut Vec<StoreEvent>) {
        let Some(r) = self.txns.get_mut(&tid) else { return };
        let read_locks = std::mem::take(&mut r.read_locks);
        let write_locks = std::mem::take(&mut r.write_locks);
        let intents = std::mem::take(&mut r.intents);
        let read_marks = std::mem::take(&mut r.read_marks);
        r.pending_locks = 0;
        if r.entered_prepared && r.ccp_end.is_none() {
            let start = r.ccp_start.unwrap_or(now);
            r.ccp_end = Some(now);
            events.push(StoreEvent::CcpClosed { tid, start, end: now });
        }
        for key in intents {
            if let Some(t) = self.tuples.get_mut(&key) {
                if t.intent == Some(tid) {
                    t.intent = None;
                }
            }
        }
        for key in read_marks {
            if let Some(t) = self.tuples.get_mut(&key) {
                t.readers.retain(|&r| r != tid);
            }
        }
        let mut keys: Vec<Key> = read_locks;
        keys.extend(write_locks);
        keys.sort_unstable();
        keys.dedup();
        for key in keys {
            self.unlock(now, tid, key, events);
        }
        // Drop any queued requests left behind by an aborting transaction,
        // re-running grants where a queue head disappeared.
        let mut drained: Vec<Key> = Vec::new();
        for (&key, t) in self.tuples.iter_mut() {
            let before = t.lock.queue.len();
            t.lock.queue.retain(|w| w.tid != tid);
            if t.lock.queue.len() != before {
                drained.push(key);
            }
        }
        for key in drained {
            self.grant_waiters(now, key, events);
        }
    }

    fn unlock(&mut self, now: SimTime, tid: TxnId, key: Key, events: &mut Vec<StoreEvent>) {
        let Some(t) = self.tuples.get_mut(&key) else { return };
        t.lock.shared.retain(|&h| h != tid);
        if t.lock.exclusive == Some(tid) {
            t.lock.exclusive = None;
        }
        self.grant_waiters(now, key, events);
    }

    /// Grants queued requests in timestamp order while they are compatible.
    fn grant_waiters(&mut self, now: SimTime, key: Key, events: &mut Vec<StoreEvent>) {
        loop {
            let Some(t) = self.tuples.get_mut(&key) else { return };
            let Some(head) = t.lock.queue.first().copied() else { return };
            if !t.lock.is_free_for(head.tid, head.mode) {
                return;
            }
            t.lock.queue.remove(0);
            t.lock.grant(head.tid, head.mode);
            let r = self.txns.get_mut(&head.tid).expect("queued txn record");
            match head.mode {
                LockMode::Shared => r.read_locks.push(key),
                LockMode::Exclusive => r.write_locks.push(key),
            }
            if !head.for_prepare {
                if r.ccp_start.is_none() {
                    r.ccp_start = Some(now);
                }
                events.push(StoreEvent::ReadGranted { tid: head.tid, key });
            } else {
                r.pending_locks -= 1;
                if r.pending_locks == 0 {
                    match self.finish_prepare_2pl(now, head.tid, events) {
                        PrepareOutcome::Decided { vote, withheld, reason } => {
                            events.push(StoreEvent::PrepareReady {
                                tid: head.tid,
                                vote,
                                withheld,
                                reason,
                            });
                        }
                        PrepareOutcome::Waiting => unreachable!("no locks left to wait on"),
                    }
                }
            }
        }
    }

    fn try_lock(
        &mut self,
        now: SimTime,
        tid: TxnId,
        ts: TxnTs,
        key: Key,
        mode: LockMode,
        events: &mut Vec<StoreEvent>,
    ) -> LockAttempt {
        self.try_lock_inner(now, tid, ts, key, mode, false, events)
    }

    fn try_lock_for_prepare(
        &mut self,
        now: SimTime,
        tid: TxnId,
        ts: TxnTs,
        key: Key,
        mode: LockMode,
        events: &mut Vec<StoreEvent>,
    ) -> LockAttempt {
        self.try_lock_inner(now, tid, ts, key, mode, true, events)
    }

    #[allow(clippy::too_many_arguments)]
    fn try_lock_inner(
        &mut self,
        now: SimTime,
        tid: TxnId,
        ts: TxnTs,
        key: Key,
        mode: LockMode,
        for_prepare: bool,
        events: &mut Vec<StoreEvent>,
    ) -> LockAttempt {
        let t = self.tuples.entry(key).or_default();
        let already = match mode {
            LockMode::Shared => {
                t.lock.shared.contains(&tid) || t.lock.exclusive == Some(tid)
            }
            LockMode::Exclusive => t.lock.exclusive == Some(tid),
        };
        if already {
            return LockAttempt::Granted;
        }
        // Wound-wait over the conflicting transactions only (shared requests
        // never collide with shared holders or waiters): an older requester
        // wounds every younger conflicter that has not yet cast a vote; a
        // younger requester waits. A cast vote makes a transaction immune —
        // it already holds everything it asked for, so waiting on it cannot
        // close a cycle. Wait edges therefore run young -> old or
        // old -> voted-sink, and no deadlock can form, while a restarted
        // transaction keeps its timestamp and ages into immunity from
        // wounds, which keeps retry counts small.
        let mut conflicters: Vec<TxnId> = t.lock.incompatible_holders(tid, mode);
        conflicters.extend(
            t.lock
                .queue
                .iter()
                .filter(|w| {
                    w.tid != tid
                        && (mode == LockMode::Exclusive || w.mode == LockMode::Exclusive)
                })
                .map(|w| w.tid),
        );
        conflicters.sort_unstable();
        conflicters.dedup();
        let victims: Vec<TxnId> = conflicters
            .iter()
            .copied()
            .filter(|c| {
                let rec = &self.txns[c];
                rec.ts > ts && rec.vote.is_none()
            })
            .collect();
        for v in victims {
            // Wounding one victim can release locks that complete another
            // victim's waiting prepare, casting its vote; re-check.
            if self.txns[&v].vote.is_none() && self.txns[&v].state != TxnState::Aborted {
                self.wound(now, v, events);
            }
        }
        let t = self.tuples.get_mut(&key).unwrap();
        let still_conflicting = !t.lock.incompatible_holders(tid, mode).is_empty()
            || t.lock.queue.iter().any(|w| {
                w.tid != tid && (mode == LockMode::Exclusive || w.mode == LockMode::Exclusive)
            });
        if t.lock.is_free_for(tid, mode) && !still_conflicting {
            t.lock.grant(tid, mode);
            let r = self.txns.get_mut(&tid).unwrap();
            match mode {
                LockMode::Shared => {
                    r.read_locks.push(key);
                    if r.ccp_start.is_none() {
                        r.ccp_start = Some(now);
                    }
                }
                LockMode::Exclusive => r.write_locks.push(key),
            }
            return LockAttempt::Granted;
        }
        let t = self.tuples.get_mut(&key).unwrap();
        let pos = t.lock.queue.partition_point(|w| w.ts < ts);
        t.lock.queue.insert(pos, LockWaiter { ts, tid, mode, for_prepare });
        LockAttempt::Waiting
    }

    /// Cancels a transaction that has been waiting on locks for too long.
    /// Votes are never cast while lock requests are outstanding, so the
    /// cancellation is always a legal local abort. This bounds the rare
    /// cross-shard weave wound-wait cannot break locally: an old transaction
    /// waiting on a young voted holder whose remote prepare in turn waits on
    /// the old one's read locks.
    pub fn timeout_waiting(&mut self, now: SimTime, tid: TxnId, events: &mut Vec<StoreEvent>) -> bool {
        let Some(rec) = self.txns.get(&tid) else { return false };
        if rec.vote.is_some() || matches!(rec.state, TxnState::Aborted | TxnState::Committed) {
            return false;
        }
        let waiting_prepare = rec.pending_locks > 0;
        let waiting_read = self
            .tuples
            .values()
            .any(|t| t.lock.queue.iter().any(|w| w.tid == tid && !w.for_prepare));
        if !waiting_prepare && !waiting_read {
            return false;
        }
        self.wound(now, tid, events);
        true
    }

    /// Wound-wait victim handling. A transaction whose prepare is in flight
    /// turns into an Abort vote the leader announces; one still executing is
    /// dropped locally and its client told to restart. Both release whatever
    /// they held, which may cascade into fresh grants.
    fn wound(&mut self, now: SimTime, victim: TxnId, events: &mut Vec<StoreEvent>) {
        let rec = self.txns.get_mut(&victim).expect("victim record");
        debug_assert!(rec.vote.is_none(), "voted transactions are immune to wounds");
        rec.abort_reason = Some(AbortReason::LockConflict);
        if rec.entered_prepared {
            rec.vote = Some(Vote::Abort);
            rec.state = TxnState::Prepared;
            self.conclude(now, victim, Decision::Abort, events);
            events.push(StoreEvent::PrepareReady {
                tid: victim,
                vote: Vote::Abort,
                withheld: false,
                reason: Some(AbortReason::LockConflict),
            });
        } else {
            rec.state = TxnState::Aborted;
            self.release_cc(now, victim, events);
            events.push(StoreEvent::ExecutionWounded { tid: victim });
        }
    }

    // ------------------------------------------------------------------
    // Follower-side application
    // ------------------------------------------------------------------

    /// Installs committed writes under explicit version numbers, without
    /// concurrency control; used by followers applying decisions shipped
    /// from the leader and by a reassigned leader replaying its log.
    pub fn apply_versioned_commit(&mut self, writes: &[(Key, Version, Value)], tid: TxnId) {
        for &(key, version, value) in writes {
            let t = self.tuples.entry(key).or_default();
            if t.versions.iter().any(|&(v, _, _)| v == version) {
                continue;
            }
            t.reserved_high = t.reserved_high.max(version);
            let pos = t.versions.partition_point(|&(v, _, _)| v < version);
            t.versions.insert(pos, (version, value, tid));
            if t.versions.len() > self.version_retention {
                let drop = t.versions.len() - self.version_retention;
                t.versions.drain(..drop);
            }
        }
    }

    /// Version-unaware install for log replay on a reassigned leader, where
    /// the crashed leader's reservations are unrecoverable.
    pub fn apply_replicated_commit(&mut self, wset: &[(Key, Value)], tid: TxnId) -> Vec<(Key, Version, Value)> {
        let mut out = Vec::with_capacity(wset.len());
        for &(key, value) in wset {
            let t = self.tuples.entry(key).or_default();
            let (head, _, _) = t.head();
            let slot = t.reserved_high.max(head) + 1;
            t.reserved_high = slot;
            t.versions.push((slot, value, tid));
            if t.versions.len() > self.version_retention {
                let drop = t.versions.len() - self.version_retention;
                t.versions.drain(..drop);
            }
            out.push((key, slot, value));
        }
        out
    }

    /// Carries durable contents across a crash: committed versions are the
    /// materialized durable log, everything else (locks, intents, precommit
    /// lists, transaction records) is volatile and lost.
    pub fn adopt_committed_state(&mut self, old: &TxnStore) {
        for (k, t) in &old.tuples {
            if !t.versions.is_empty() {
                self.tuples.entry(*k).or_default().versions = t.versions.clone();
            }
        }
    }

    /// Debug dump: keys with committed heads and precommit lists.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (key, t) in &self.tuples {
            let (v, val, _) = t.head();
            let pend: Vec<String> = t.precommit.iter().map(|(p, _)| p.to_string()).collect();
            let _ = writeln!(s, "key={key} v{v}={val} precommit=[{}]", pend.join(","));
        }
        s
    }
}

#[derive(Debug, PartialEq, Eq)]
enum LockAttempt {
    Granted,
    Waiting,
}

/// Serializable snapshot line for the store dump interface.
#[derive(Debug, Serialize)]
pub struct StoreDumpLine {
    pub key: Key,
    pub version: Version,
    pub value: Value,
    pub precommit: Vec<TxnId>,
}
