//! History oracles over run traces.
//!
//! Three independent checks, all reconstructed purely from trace events:
//!
//! - serializability: the serialization graph over committed transactions
//!   (ww edges from per-key version order, wr edges from observed reads, rw
//!   edges from read-version to successor-writer) must be acyclic. For small
//!   committed sets an exhaustive search for a witness serial order (view
//!   style: every read explained by the latest preceding write) cross-checks
//!   the graph verdict.
//! - atomicity: a committed transaction applies Commit on exactly its
//!   participant set; an aborted one applies Commit nowhere.
//! - recoverability: whoever read a precommitted write commits only after
//!   its writer, and an aborted writer cascade-aborts every recorded reader.

use crate::topology::ShardId;
use crate::trace::{Trace, TraceEvent};
use crate::types::{Decision, Key, ReadVersion, TxnId, Version};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Serialize)]
pub struct HistoryReport {
    pub serializable: bool,
    pub atomic: bool,
    pub recoverable: bool,
    pub committed: usize,
    pub aborted: usize,
    /// Result of the exhaustive witness search when it ran (small histories).
    pub exhaustive: Option<bool>,
    pub violations: Vec<String>,
}

impl HistoryReport {
    pub fn all_hold(&self) -> bool {
        self.serializable && self.atomic && self.recoverable
    }
}

#[derive(Debug, Default)]
struct HistoryFacts {
    /// Global decision per transaction, in decision order.
    decisions: BTreeMap<TxnId, (Decision, usize)>,
    /// Committed reads: reader -> [(key, observed version)].
    reads: BTreeMap<TxnId, Vec<(Key, ReadVersion)>>,
    /// Installed versions per key in version order: key -> [(version, tid)].
    installs: BTreeMap<Key, Vec<(Version, TxnId)>>,
    /// writer tid -> key -> version it installed.
    installed_by: BTreeMap<TxnId, BTreeMap<Key, Version>>,
    /// Commit applications per transaction (leader side).
    applied_commit: BTreeMap<TxnId, BTreeSet<ShardId>>,
    /// Participant sets from client outcomes.
    participants: BTreeMap<TxnId, Vec<ShardId>>,
    /// wr dependencies recorded through precommit lists: (writer, reader).
    wr_pending: Vec<(TxnId, TxnId, Key)>,
}

fn collect(trace: &Trace) -> (HistoryFacts, Vec<String>) {
    let mut f = HistoryFacts::default();
    let mut violations = Vec::new();
    for (idx, ev) in trace.events.iter().enumerate() {
        match ev {
            TraceEvent::DecisionMade { tid, decision, .. } => {
                if let Some(&(prev, _)) = f.decisions.get(tid) {
                    if prev != *decision {
                        violations.push(format!(
                            "decision uniqueness: {tid} decided both {prev} and {decision}"
                        ));
                    }
                } else {
                    f.decisions.insert(*tid, (*decision, idx));
                }
            }
            TraceEvent::ReadServed { tid, key, version, .. } => {
                f.reads.entry(*tid).or_default().push((*key, *version));
            }
            TraceEvent::VersionInstalled { key, version, tid, .. } => {
                let list = f.installs.entry(*key).or_default();
                if !list.iter().any(|&(v, t)| v == *version && t == *tid) {
                    list.push((*version, *tid));
                }
                f.installed_by.entry(*tid).or_default().insert(*key, *version);
            }
            TraceEvent::DecisionApplied { shard, tid, decision, .. } => {
                if *decision == Decision::Commit {
                    f.applied_commit.entry(*tid).or_default().insert(*shard);
                }
            }
            TraceEvent::TxnOutcome { tid, decision, participants, .. } => {
                f.participants.insert(*tid, participants.clone());
                if let Some(&(d, _)) = f.decisions.get(tid) {
                    if d != *decision {
                        violations.push(format!(
                            "client of {tid} observed {decision}, decision was {d}"
                        ));
                    }
                }
            }
            TraceEvent::WrDependency { reader, writer, key, .. } => {
                f.wr_pending.push((*writer, *reader, *key));
            }
            _ => {}
        }
    }
    for list in f.installs.values_mut() {
        list.sort_unstable_by_key(|&(v, _)| v);
    }
    (f, violations)
}

fn committed_set(f: &HistoryFacts) -> BTreeSet<TxnId> {
    f.decisions
        .iter()
        .filter(|(_, (d, _))| *d == Decision::Commit)
        .map(|(t, _)| *t)
        .collect()
}

/// Serialization graph edges over committed transactions.
fn build_edges(f: &HistoryFacts, committed: &BTreeSet<TxnId>) -> BTreeMap<TxnId, BTreeSet<TxnId>> {
    let mut edges: BTreeMap<TxnId, BTreeSet<TxnId>> = BTreeMap::new();
    let mut add = |from: TxnId, to: TxnId| {
        if from != to && committed.contains(&from) && committed.contains(&to) {
            edges.entry(from).or_default().insert(to);
        }
    };
    // ww: per-key version order.
    for list in f.installs.values() {
        for w in list.windows(2) {
            add(w[0].1, w[1].1);
        }
    }
    // wr and rw from observed reads.
    for (&reader, reads) in &f.reads {
        if !committed.contains(&reader) {
            continue;
        }
        for &(key, version) in reads {
            let resolved = match version {
                ReadVersion::Committed(v) => v,
                ReadVersion::Pending(w) => {
                    add(w, reader);
                    match f.installed_by.get(&w).and_then(|m| m.get(&key)) {
                        Some(&v) => v,
                        None => continue, // writer never committed; recoverability flags it
                    }
                }
            };
            if resolved > 0 {
                if let Some(list) = f.installs.get(&key) {
                    if let Some(&(_, w)) = list.iter().find(|&&(v, _)| v == resolved) {
                        add(w, reader);
                    }
                }
            }
            // rw: the reader precedes whoever installed the next version
            // (reservation gaps from aborted writers are skipped).
            if let Some(list) = f.installs.get(&key) {
                if let Some(&(_, next)) = list.iter().find(|&&(v, _)| v > resolved) {
                    add(reader, next);
                }
            }
        }
    }
    edges
}

/// Returns None when acyclic, otherwise one witness cycle.
fn find_cycle(
    nodes: &BTreeSet<TxnId>,
    edges: &BTreeMap<TxnId, BTreeSet<TxnId>>,
) -> Option<Vec<TxnId>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Color {
        White,
        Gray,
        Black,
    }
    let mut color: BTreeMap<TxnId, Color> = nodes.iter().map(|&n| (n, Color::White)).collect();
    let empty = BTreeSet::new();
    for &start in nodes {
        if color[&start] != Color::White {
            continue;
        }
        // Iterative DFS with an explicit stack of (node, unvisited neighbors).
        let mut stack: Vec<(TxnId, Vec<TxnId>)> = Vec::new();
        color.insert(start, Color::Gray);
        stack.push((start, edges.get(&start).unwrap_or(&empty).iter().copied().collect()));
        while let Some((node, todo)) = stack.last_mut() {
            match todo.pop() {
                Some(next) => match color.get(&next).copied().unwrap_or(Color::Black) {
                    Color::Gray => {
                        let mut cycle: Vec<TxnId> =
                            stack.iter().map(|(n, _)| *n).skip_while(|n| *n != next).collect();
                        cycle.push(next);
                        return Some(cycle);
                    }
                    Color::White => {
                        color.insert(next, Color::Gray);
                        let n = edges.get(&next).unwrap_or(&empty).iter().copied().collect();
                        stack.push((next, n));
                    }
                    Color::Black => {}
                },
                None => {
                    color.insert(*node, Color::Black);
                    stack.pop();
                }
            }
        }
    }
    None
}

/// Exhaustive witness search: try to order the committed transactions so
/// every read is explained by the latest preceding write (version 0 when no
/// write precedes). Independent of the graph construction.
pub fn exhaustive_serializable(trace: &Trace, max_txns: usize) -> Option<bool> {
    let (f, _) = collect(trace);
    let committed: Vec<TxnId> = committed_set(&f).into_iter().collect();
    if committed.len() > max_txns {
        return None;
    }
    let reads_of = |t: TxnId| f.reads.get(&t).cloned().unwrap_or_default();
    let writes_of = |t: TxnId| {
        f.installed_by.get(&t).map(|m| m.keys().copied().collect::<Vec<_>>()).unwrap_or_default()
    };
    fn search(
        remaining: &mut Vec<TxnId>,
        state: &mut BTreeMap<Key, TxnId>,
        f: &HistoryFacts,
        reads_of: &dyn Fn(TxnId) -> Vec<(Key, ReadVersion)>,
        writes_of: &dyn Fn(TxnId) -> Vec<Key>,
    ) -> bool {
        if remaining.is_empty() {
            return true;
        }
        for i in 0..remaining.len() {
            let t = remaining[i];
            let ok = reads_of(t).iter().all(|&(key, version)| {
                let last = state.get(&key).copied();
                match version {
                    ReadVersion::Committed(0) => last.is_none(),
                    ReadVersion::Committed(v) => last.is_some_and(|w| {
                        f.installed_by.get(&w).and_then(|m| m.get(&key)) == Some(&v)
                    }),
                    ReadVersion::Pending(w) => last == Some(w),
                }
            });
            if !ok {
                continue;
            }
            remaining.remove(i);
            let written = writes_of(t);
            let saved: Vec<(Key, Option<TxnId>)> =
                written.iter().map(|&k| (k, state.get(&k).copied())).collect();
            for &k in &written {
                state.insert(k, t);
            }
            if search(remaining, state, f, reads_of, writes_of) {
                return true;
            }
            for (k, prev) in saved {
                match prev {
                    Some(w) => state.insert(k, w),
                    None => state.remove(&k),
                };
            }
            remaining.insert(i, t);
        }
        false
    }
    let mut remaining = committed;
    let mut state = BTreeMap::new();
    Some(search(&mut remaining, &mut state, &f, &reads_of, &writes_of))
}

/// Full oracle pass over a trace.
pub fn check_history(trace: &Trace) -> HistoryReport {
    let (f, mut violations) = collect(trace);
    let committed = committed_set(&f);
    let aborted = f.decisions.len() - committed.len();

    // Serializability: acyclic serialization graph.
    let edges = build_edges(&f, &committed);
    let cycle = find_cycle(&committed, &edges);
    let serializable = cycle.is_none();
    if let Some(cycle) = cycle {
        let path: Vec<String> = cycle.iter().map(|t| t.to_string()).collect();
        violations.push(format!("serialization graph cycle: {}", path.join(" -> ")));
    }

    // Atomicity: Commit applied on all participants or none.
    let mut atomic = true;
    for (&tid, &(decision, _)) in &f.decisions {
        let applied = f.applied_commit.get(&tid).cloned().unwrap_or_default();
        match decision {
            Decision::Commit => {
                if let Some(parts) = f.participants.get(&tid) {
                    let expected: BTreeSet<ShardId> = parts.iter().copied().collect();
                    if applied != expected {
                        atomic = false;
                        violations.push(format!(
                            "atomicity: {tid} committed on {applied:?}, expected {expected:?}"
                        ));
                    }
                }
            }
            Decision::Abort => {
                if !applied.is_empty() {
                    atomic = false;
                    violations.push(format!("atomicity: aborted {tid} applied on {applied:?}"));
                }
            }
        }
    }

    // Recoverability: wr order respected, cascades complete.
    let mut recoverable = true;
    for &(writer, reader, key) in &f.wr_pending {
        let writer_dec = f.decisions.get(&writer);
        let reader_dec = f.decisions.get(&reader);
        if let Some(&(Decision::Commit, r_idx)) = reader_dec {
            match writer_dec {
                Some(&(Decision::Commit, w_idx)) => {
                    if w_idx >= r_idx {
                        recoverable = false;
                        violations.push(format!(
                            "recoverability: {reader} committed before its writer {writer} (key {key})"
                        ));
                    }
                }
                _ => {
                    recoverable = false;
                    violations.push(format!(
                        "recoverability: {reader} committed after reading {writer}, which never committed (key {key})"
                    ));
                }
            }
        }
    }

    let exhaustive = if committed.len() <= 8 { exhaustive_serializable(trace, 8) } else { None };
    if let Some(false) = exhaustive {
        violations.push("exhaustive witness search found no serial order".into());
    }

    HistoryReport {
        serializable,
        atomic,
        recoverable,
        committed: committed.len(),
        aborted,
        exhaustive,
        violations,
    }
}

/// Dependency-order property over a trace: committed readers of precommitted
/// writes commit strictly after their writers, and an aborted precommitted
/// writer cascade-aborts every recorded reader.
pub fn check_dependency_order(trace: &Trace) -> Result<(), Vec<String>> {
    let (f, _) = collect(trace);
    let mut errs = Vec::new();
    for &(writer, reader, key) in &f.wr_pending {
        match (f.decisions.get(&writer), f.decisions.get(&reader)) {
            (Some(&(Decision::Commit, w_idx)), Some(&(Decision::Commit, r_idx))) => {
                if w_idx >= r_idx {
                    errs.push(format!(
                        "{reader} (read {key} from {writer}) committed before its writer"
                    ));
                }
            }
            (Some(&(Decision::Abort, _)) | None, Some(&(Decision::Commit, _))) => {
                errs.push(format!(
                    "{reader} committed although writer {writer} of key {key} aborted"
                ));
            }
            _ => {}
        }
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(errs)
    }
}
