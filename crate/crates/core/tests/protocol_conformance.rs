//! End-to-end conformance scenarios: replication fan-out shapes, fast/slow
//! path behavior, co-coordinator decision invariance, decision replication,
//! failure handling, and read-optimization mechanics.

mod common;

use common::*;
use d2pc_core::cluster::{build, run_experiment};
use d2pc_core::config::{ExperimentConfig, ShardConfig};
use d2pc_core::protocol::{Msg, Routing};
use d2pc_core::simnet::StopCondition;
use d2pc_core::time::SimTime;
use d2pc_core::topology::{DcId, NodeId, ShardId};
use d2pc_core::trace::{DecisionPath, TraceEvent};
use d2pc_core::types::{AbortReason, Decision, Protocol, Vote};
use d2pc_core::workload::WorkloadKind;

fn delivered<'a>(
    trace: &'a d2pc_core::trace::Trace,
) -> impl Iterator<Item = (&'a SimTime, &'a NodeId, &'a NodeId, &'a str)> {
    trace.events.iter().filter_map(|e| match e {
        TraceEvent::Delivered { at, from, to, msg } => Some((at, from, to, msg.as_str())),
        _ => None,
    })
}

fn outcomes(trace: &d2pc_core::trace::Trace) -> Vec<(u32, Decision, u32)> {
    trace
        .events
        .iter()
        .filter_map(|e| match e {
            TraceEvent::TxnOutcome { client, decision, retries, .. } => {
                Some((*client, *decision, *retries))
            }
            _ => None,
        })
        .collect()
}

/// Final (non-withheld) vote per shard, per transaction; the decision oracle
/// is their conjunction.
fn vote_oracle(trace: &d2pc_core::trace::Trace) -> Vec<(d2pc_core::TxnId, Decision)> {
    use std::collections::BTreeMap;
    let mut votes: BTreeMap<(d2pc_core::TxnId, ShardId), Vote> = BTreeMap::new();
    for e in &trace.events {
        if let TraceEvent::VoteRecorded { shard, tid, vote, withheld, .. } = e {
            if !withheld {
                votes.insert((*tid, *shard), *vote);
            }
        }
    }
    let mut by_tid: BTreeMap<d2pc_core::TxnId, Decision> = BTreeMap::new();
    for ((tid, _), vote) in votes {
        let d = by_tid.entry(tid).or_insert(Decision::Commit);
        if vote == Vote::Abort {
            *d = Decision::Abort;
        }
    }
    by_tid.into_iter().collect()
}

fn decisions(trace: &d2pc_core::trace::Trace) -> Vec<(d2pc_core::TxnId, Decision, DecisionPath)> {
    use std::collections::BTreeMap;
    let mut first: BTreeMap<d2pc_core::TxnId, (Decision, DecisionPath)> = BTreeMap::new();
    for e in &trace.events {
        if let TraceEvent::DecisionMade { tid, decision, path, .. } = e {
            first.entry(*tid).or_insert((*decision, *path));
        }
    }
    first.into_iter().map(|(t, (d, p))| (t, d, p)).collect()
}

// ---------------------------------------------------------------------
// Replication fan-out
// ---------------------------------------------------------------------

/// Three-replica shard with replicas in every datacenter: the leader sends
/// append messages to its two followers (plus its own fan-out copy) and no
/// direct votes, since every datacenter holds a replica.
#[test]
fn replicate_three_dcs_no_direct_votes() {
    let mut cfg = probe_config(Protocol::D2pc, three_dc_topology(), 0);
    cfg.record_messages = true;
    let out = run_experiment(&cfg).unwrap();
    let appends: Vec<_> = delivered(&out.trace)
        .filter(|(_, from, to, msg)| {
            *msg == "ReplicationAppend"
                && matches!(from, NodeId::Replica { .. })
                && from != to
        })
        .collect();
    // 3 shards x 2 followers.
    assert_eq!(appends.len(), 6);
    let direct_votes = delivered(&out.trace)
        .filter(|(_, from, to, msg)| {
            *msg == "FollowerNotice"
                && matches!(from, NodeId::Replica { .. })
                && matches!(to, NodeId::CoCoord { .. })
                && from.dc() != to.dc()
        })
        .count();
    assert_eq!(direct_votes, 0);
}

/// Five datacenters, shard replicated in three: the two replica-less
/// datacenters get the vote directly from the leader.
#[test]
fn replicate_five_dcs_sends_direct_votes() {
    let all = [HZ, BJ, SF, VA, FRA];
    let names: Vec<String> = [HZ, SF, FRA].iter().map(|&d| dc_name(d)).collect();
    let topo = topology_over(
        &all,
        vec![ShardConfig { leader: dc_name(HZ), replicas: names.clone() }],
    );
    let mut cfg = probe_config(Protocol::D2pc, topo, 0);
    cfg.record_messages = true;
    let out = run_experiment(&cfg).unwrap();
    let appends = delivered(&out.trace)
        .filter(|(_, from, to, msg)| *msg == "ReplicationAppend" && from != to)
        .count();
    assert_eq!(appends, 2, "two follower appends");
    let direct: Vec<DcId> = delivered(&out.trace)
        .filter(|(_, from, to, msg)| {
            *msg == "FollowerNotice"
                && matches!(to, NodeId::CoCoord { .. })
                && from.dc() != to.dc()
        })
        .map(|(_, _, to, _)| to.dc())
        .collect();
    // Beijing and Virginia lack replicas; their co-coordinators hear the
    // leader's vote directly.
    assert_eq!(direct, vec![DcId(1), DcId(3)]);
    assert_eq!(outcomes(&out.trace), vec![(0, Decision::Commit, 0)]);
}

// ---------------------------------------------------------------------
// Co-coordinator decision invariance
// ---------------------------------------------------------------------

/// Deliver the same vote multiset in every permutation: each order yields
/// the identical PreCommit decision.
#[test]
fn precommit_decision_is_order_invariant() {
    use d2pc_core::protocol::cocoord::CoCoordNode;
    use d2pc_core::protocol::ProtocolConfig;
    use d2pc_core::simnet::Kernel;
    use std::sync::Arc;

    let cfg = probe_config(Protocol::D2pc, three_dc_topology(), 0);
    let topology = Arc::new(cfg.build_topology().unwrap());
    let shard_list = vec![ShardId(0), ShardId(1), ShardId(2)];
    let tid = d2pc_core::TxnId::new(0, 0);

    let perms: Vec<Vec<usize>> =
        vec![vec![0, 1, 2], vec![0, 2, 1], vec![1, 0, 2], vec![1, 2, 0], vec![2, 0, 1], vec![2, 1, 0]];
    for votes in [
        [Vote::Commit, Vote::Commit, Vote::Commit],
        [Vote::Commit, Vote::Abort, Vote::Commit],
        [Vote::Abort, Vote::Abort, Vote::Commit],
    ] {
        let mut seen: Option<Decision> = None;
        for perm in &perms {
            let mut net: Kernel<Msg> = Kernel::new(topology.matrix.clone(), false);
            // Register message targets so sends done by the node are legal.
            for dc in topology.dcs() {
                net.register(NodeId::CoCoord { group: 0, dc });
                for s in topology.shard_ids() {
                    net.register(NodeId::Replica { shard: s, dc });
                }
            }
            let pcfg = ProtocolConfig::defaults_for(&topology);
            let routing = Routing::from_topology(&topology);
            // Co-coordinator in Frankfurt (not the correspondent).
            let mut node = CoCoordNode::new(0, DcId(2), pcfg, topology.clone());
            for &i in perm {
                node.handle(
                    &mut net,
                    &routing,
                    NodeId::Replica { shard: ShardId(i as u32), dc: DcId(2) },
                    Msg::FollowerNotice {
                        tid,
                        shard: ShardId(i as u32),
                        vote: votes[i],
                        reason: None,
                        replicated: true,
                        replica_dc: Some(DcId(2)),
                        shard_list: shard_list.clone(),
                        client: NodeId::Client { id: 0, dc: DcId(0) },
                    },
                );
            }
            let got = node.precommit_decision(tid).expect("decision reached");
            let expect = if votes.contains(&Vote::Abort) { Decision::Abort } else { Decision::Commit };
            assert_eq!(got, expect);
            match seen {
                None => seen = Some(got),
                Some(prev) => assert_eq!(prev, got, "order {perm:?} changed the decision"),
            }
        }
    }
}

/// An Abort vote short-circuits: the decision lands before other shards vote.
#[test]
fn abort_vote_short_circuits_precommit() {
    use d2pc_core::protocol::cocoord::CoCoordNode;
    use d2pc_core::protocol::ProtocolConfig;
    use d2pc_core::simnet::Kernel;
    use std::sync::Arc;

    let cfg = probe_config(Protocol::D2pc, three_dc_topology(), 0);
    let topology = Arc::new(cfg.build_topology().unwrap());
    let mut net: Kernel<Msg> = Kernel::new(topology.matrix.clone(), false);
    for dc in topology.dcs() {
        net.register(NodeId::CoCoord { group: 0, dc });
        for s in topology.shard_ids() {
            net.register(NodeId::Replica { shard: s, dc });
        }
    }
    let pcfg = ProtocolConfig::defaults_for(&topology);
    let routing = Routing::from_topology(&topology);
    let mut node = CoCoordNode::new(0, DcId(2), pcfg, topology.clone());
    let tid = d2pc_core::TxnId::new(0, 0);
    node.handle(
        &mut net,
        &routing,
        NodeId::Replica { shard: ShardId(1), dc: DcId(2) },
        Msg::FollowerNotice {
            tid,
            shard: ShardId(1),
            vote: Vote::Abort,
            reason: Some(AbortReason::StaleRead),
            replicated: true,
            replica_dc: Some(DcId(2)),
            shard_list: vec![ShardId(0), ShardId(1), ShardId(2)],
            client: NodeId::Client { id: 0, dc: DcId(0) },
        },
    );
    assert_eq!(node.precommit_decision(tid), Some(Decision::Abort));
}

// ---------------------------------------------------------------------
// Slow path
// ---------------------------------------------------------------------

/// Client in Beijing (no replicas there), every co-coordinator of the
/// replica datacenters crashed: the fast path cannot assemble any quorum,
/// yet the transaction commits through leader reports at the expected slow
/// latency, and a failure-free run reaches the same decisions.
#[test]
fn slow_path_commits_when_cocoords_are_down() {
    let all = [HZ, BJ, SF, VA, FRA];
    let replica_names: Vec<String> = [HZ, SF, FRA].iter().map(|&d| dc_name(d)).collect();
    let topo = topology_over(
        &all,
        (0..3)
            .map(|i| ShardConfig {
                leader: dc_name([HZ, SF, FRA][i]),
                replicas: replica_names.clone(),
            })
            .collect(),
    );
    let mut cfg = probe_config(Protocol::D2pc, topo, BJ as u32);
    for dc in [HZ, SF, FRA, VA] {
        cfg.failures.push(crash(0.0, &format!("cocoord:0:{}", dc_name(dc))));
    }
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(outcomes(&out.trace), vec![(0, Decision::Commit, 0)]);
    let dec = decisions(&out.trace);
    assert_eq!(dec.len(), 1);
    assert_eq!(dec[0].2, DecisionPath::Slow);
    // Slow path latency: max over shards of
    // L(BJ,i)/2 + majority-wait(i) + L(i,BJ)/2, Frankfurt dominating:
    // 120 + 151 + 120 = 391ms.
    let rec = &out.records[0];
    assert!(
        (rec.commit_latency_ms - 391.0).abs() < 0.01,
        "slow-path latency {} != 391",
        rec.commit_latency_ms
    );

    // Matched failure-free run over the same seed: identical decisions.
    let mut clean = cfg.clone();
    clean.failures.clear();
    let clean_out = run_experiment(&clean).unwrap();
    assert_eq!(
        outcomes(&out.trace),
        outcomes(&clean_out.trace),
        "fast and slow paths reduce the same votes"
    );
}

/// Single-shard transaction on the slow path behaves like classic 2PC with
/// replication underneath.
#[test]
fn single_shard_slow_path_is_classic_two_phase() {
    let all = [HZ, BJ, SF, VA, FRA];
    let topo = topology_over(
        &all,
        vec![ShardConfig {
            leader: dc_name(HZ),
            replicas: [HZ, SF, FRA].iter().map(|&d| dc_name(d)).collect(),
        }],
    );
    let mut cfg = probe_config(Protocol::D2pc, topo, BJ as u32);
    for dc in [HZ, SF, FRA, VA] {
        cfg.failures.push(crash(0.0, &format!("cocoord:0:{}", dc_name(dc))));
    }
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(outcomes(&out.trace), vec![(0, Decision::Commit, 0)]);
    // L(BJ,HZ)/2 + majority(HZ) + L(HZ,BJ)/2 = 15 + 140 + 15 = 170.
    assert!((out.records[0].commit_latency_ms - 170.0).abs() < 0.01);
}

// ---------------------------------------------------------------------
// Decision replication
// ---------------------------------------------------------------------

/// Three datacenters: the decision is fault-tolerant after the second ack
/// (self plus one peer); both peers ack here.
#[test]
fn decision_replicates_to_majority() {
    let mut cfg = probe_config(Protocol::D2pc, three_dc_topology(), 0);
    cfg.record_messages = true;
    let out = run_experiment(&cfg).unwrap();
    let acks = delivered(&out.trace).filter(|(_, _, _, msg)| *msg == "DecisionAck").count();
    assert_eq!(acks, 2);
}

/// One co-coordinator crashes before the decision: replication still reaches
/// a majority of the group.
#[test]
fn decision_replication_survives_one_cocoord_crash() {
    let mut cfg = probe_config(Protocol::D2pc, three_dc_topology(), 0);
    cfg.record_messages = true;
    cfg.failures.push(crash(200.0, &format!("cocoord:0:{}", dc_name(FRA))));
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(outcomes(&out.trace), vec![(0, Decision::Commit, 0)]);
    let acks = delivered(&out.trace).filter(|(_, _, _, msg)| *msg == "DecisionAck").count();
    assert_eq!(acks, 1, "the surviving peer acks; majority = self + 1");
}

// ---------------------------------------------------------------------
// Failure handling
// ---------------------------------------------------------------------

/// Both followers of a shard crash: quorum is impossible, and the
/// correspondent coordinator resolves the precommitted transaction with a
/// replication-failure abort.
#[test]
fn replication_failure_aborts_precommitted_txn() {
    let mut cfg = probe_config(Protocol::D2pc, three_dc_topology(), 0);
    cfg.workload.retry_limit = 0;
    // Shard 1 is led from San Francisco; kill its Hangzhou and Frankfurt
    // followers before anything starts.
    cfg.failures.push(crash(0.0, &format!("replica:1:{}", dc_name(HZ))));
    cfg.failures.push(crash(0.0, &format!("replica:1:{}", dc_name(FRA))));
    let out = run_experiment(&cfg).unwrap();
    let outs = outcomes(&out.trace);
    assert_eq!(outs, vec![(0, Decision::Abort, 0)]);
    assert_eq!(
        out.records[0].aborted_reason,
        Some(AbortReason::ReplicationFailure),
        "abort cause is the lost majority"
    );
    // The San Francisco leader had precommitted before the abort landed.
    let precommitted = out.trace.events.iter().any(|e| {
        matches!(e, TraceEvent::PreCommitApplied { shard, .. } if *shard == ShardId(1))
    });
    assert!(precommitted, "the transaction reached PreCommit first");
}

/// Crash of a participant leader before its prepare arrives; the oracle
/// reassigns leadership and the client's re-driven commit completes.
#[test]
fn leader_crash_with_reassignment_completes() {
    let mut cfg = probe_config(Protocol::D2pc, three_dc_topology(), 0);
    // Shard 2 is led from Frankfurt; the prepare lands at 115.5ms.
    cfg.failures.push(crash(50.0, &format!("replica:2:{}", dc_name(FRA))));
    cfg.failures.push(reassign(400.0, 2, &dc_name(HZ)));
    let out = run_experiment(&cfg).unwrap();
    let outs = outcomes(&out.trace);
    assert_eq!(outs, vec![(0, Decision::Commit, 0)]);
    let reassigned = out
        .trace
        .events
        .iter()
        .any(|e| matches!(e, TraceEvent::LeaderReassigned { shard, .. } if *shard == ShardId(2)));
    assert!(reassigned);
}

/// A crashed co-coordinator only delays its co-located leader's conclusion:
/// the leader still ends the transaction from the correspondent's decision.
#[test]
fn cocoord_crash_leaves_leader_on_final_decision() {
    let mut cfg = probe_config(Protocol::D2pc, three_dc_topology(), 0);
    cfg.failures.push(crash(0.0, &format!("cocoord:0:{}", dc_name(FRA))));
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(outcomes(&out.trace), vec![(0, Decision::Commit, 0)]);
    // Frankfurt's leader never saw a PreCommit but applied the commit.
    let fra_precommit = out.trace.events.iter().any(|e| {
        matches!(e, TraceEvent::PreCommitApplied { shard, .. } if *shard == ShardId(2))
    });
    assert!(!fra_precommit);
    let fra_commit = out.trace.events.iter().any(|e| {
        matches!(e, TraceEvent::DecisionApplied { shard, decision: Decision::Commit, .. } if *shard == ShardId(2))
    });
    assert!(fra_commit);
}

// ---------------------------------------------------------------------
// Recovery of the correspondent coordinator
// ---------------------------------------------------------------------

fn recovery_cfg(crash_at_ms: f64) -> ExperimentConfig {
    let mut cfg = probe_config(Protocol::D2pc, three_dc_topology(), 0);
    cfg.dissemination_step_ms = Some(5.0);
    cfg.failures.push(crash(crash_at_ms, &format!("cocoord:0:{}", dc_name(HZ))));
    cfg
}

/// Case 1: the correspondent dies after the decision reached one peer; the
/// surviving co-coordinators recover the same decision from each other.
#[test]
fn recovery_case1_adopts_existing_decision() {
    // Decision at 231ms; DecisionReplicate to SF at +5ms, to FRA at +10ms.
    let out = run_experiment(&recovery_cfg(238.0)).unwrap();
    let dec = decisions(&out.trace);
    assert_eq!(dec.len(), 1);
    let (_, d, _) = dec[0];
    assert_eq!(d, Decision::Commit);
    let recovered = out.trace.events.iter().any(|e| {
        matches!(
            e,
            TraceEvent::DecisionMade { path: DecisionPath::RecoveredDecision, decision: Decision::Commit, .. }
        )
    });
    assert!(recovered, "a surviving co-coordinator adopted the decision");
    // Every leader finished with the same commit.
    for s in 0..3u32 {
        assert!(out.trace.events.iter().any(|e| matches!(
            e,
            TraceEvent::DecisionApplied { shard, decision: Decision::Commit, .. } if *shard == ShardId(s)
        )));
    }
}

/// Case 2: the correspondent dies before any decision exists; the elected
/// co-coordinator runs the termination protocol over the participant
/// leaders and reaches the vote-conjunction decision.
#[test]
fn recovery_case2_terminates_from_votes() {
    let out = run_experiment(&recovery_cfg(100.0)).unwrap();
    let dec = decisions(&out.trace);
    assert_eq!(dec.len(), 1);
    let (tid, d, path) = dec[0];
    assert_eq!(path, DecisionPath::Termination);
    let oracle = vote_oracle(&out.trace);
    assert_eq!(oracle, vec![(tid, d)], "termination equals the vote conjunction");
    // The client still learns its outcome.
    assert_eq!(outcomes(&out.trace), vec![(0, d, 0)]);
}

/// No crash: recovery never fires (the timeout exceeds the commit latency).
#[test]
fn no_crash_means_no_recovery() {
    let cfg = probe_config(Protocol::D2pc, three_dc_topology(), 0);
    let out = run_experiment(&cfg).unwrap();
    for e in &out.trace.events {
        if let TraceEvent::DecisionMade { path, .. } = e {
            assert_eq!(*path, DecisionPath::Fast);
        }
    }
}

// ---------------------------------------------------------------------
// Read optimization
// ---------------------------------------------------------------------

/// With read optimization and co-located replicas, execution reads never
/// leave the datacenter.
#[test]
fn read_opt_reads_stay_local() {
    let mut cfg = probe_config(Protocol::D2pc, three_dc_topology(), 0);
    cfg.record_messages = true;
    cfg.workload.kind = WorkloadKind::Ycsbt;
    cfg.workload.zipf_theta = 0.0;
    cfg.workload.txn_limit = Some(5);
    cfg.workload.keys_per_shard = 1000;
    let out = run_experiment(&cfg).unwrap();
    for (_, from, to, msg) in delivered(&out.trace) {
        if msg == "ReadRequest" {
            assert_eq!(from.dc(), to.dc(), "read {from} -> {to} crossed datacenters");
        }
    }
}

/// Without read optimization, reads are served by shard leaders wherever
/// they are.
#[test]
fn no_read_opt_reads_go_to_leaders() {
    let mut cfg = probe_config(Protocol::D2pc, three_dc_topology(), 0);
    cfg.record_messages = true;
    cfg.read_opt = false;
    cfg.workload.kind = WorkloadKind::Ycsbt;
    cfg.workload.zipf_theta = 0.0;
    cfg.workload.txn_limit = Some(5);
    cfg.workload.keys_per_shard = 1000;
    let out = run_experiment(&cfg).unwrap();
    let mut reads = 0;
    for (_, _, to, msg) in delivered(&out.trace) {
        if msg == "ReadRequest" {
            let NodeId::Replica { shard, dc } = to else { panic!("read to non-replica") };
            // Shard i is led from datacenter i in this topology.
            assert_eq!(dc.index(), shard.index(), "reads go to the leader replica");
            reads += 1;
        }
    }
    assert!(reads > 0);
}

/// A crashed local replica forces the read to fall back to the leader after
/// the retry timeout; the transaction still commits.
#[test]
fn crashed_local_replica_falls_back_to_leader() {
    let mut cfg = probe_config(Protocol::D2pc, three_dc_topology(), 0);
    cfg.record_messages = true;
    cfg.workload.kind = WorkloadKind::Ycsbt;
    cfg.workload.zipf_theta = 0.0;
    cfg.workload.txn_limit = Some(10);
    cfg.workload.keys_per_shard = 1000;
    // The Hangzhou client reads shard 1 (San Francisco leader) from its
    // local Hangzhou follower, which is down.
    cfg.failures.push(crash(0.0, &format!("replica:1:{}", dc_name(HZ))));
    let out = run_experiment(&cfg).unwrap();
    let outs = outcomes(&out.trace);
    assert_eq!(outs.len(), 10);
    assert!(outs.iter().all(|(_, d, _)| *d == Decision::Commit));
    let fallback = delivered(&out.trace).any(|(_, from, to, msg)| {
        msg == "ReadRequest"
            && matches!(from, NodeId::Client { .. })
            && matches!(to, NodeId::Replica { shard, dc } if *shard == ShardId(1) && *dc == DcId(1))
    });
    assert!(fallback, "leader read after the local replica timed out");
}

// ---------------------------------------------------------------------
// Co-coordinator groups
// ---------------------------------------------------------------------

/// Two groups: transactions route by counter parity and all still commit.
#[test]
fn sharded_cocoordinator_groups_work() {
    let mut cfg = probe_config(Protocol::D2pc, three_dc_topology(), 0);
    cfg.coordinator_groups = 2;
    cfg.record_messages = true;
    cfg.workload.txn_limit = Some(6);
    let out = run_experiment(&cfg).unwrap();
    let outs = outcomes(&out.trace);
    assert_eq!(outs.len(), 6);
    assert!(outs.iter().all(|(_, d, _)| *d == Decision::Commit));
    // Both groups saw traffic.
    let mut groups_hit = std::collections::BTreeSet::new();
    for (_, _, to, msg) in delivered(&out.trace) {
        if msg == "CommitRequest" {
            let NodeId::CoCoord { group, .. } = to else { panic!() };
            groups_hit.insert(*group);
        }
    }
    assert_eq!(groups_hit.into_iter().collect::<Vec<_>>(), vec![0, 1]);
}
