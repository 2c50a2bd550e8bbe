//! Acceptance suite: ten end-to-end criteria covering the latency anchors,
//! calculator/simulator agreement, path equivalence, recovery safety,
//! history correctness, directional performance, starvation freedom, and
//! co-coordinator sharding. Each test prints one PASS line; run with
//! `cargo test --test acceptance -- --nocapture` to see them.

mod common;

use common::*;
use d2pc_core::analytic::Analytic;
use d2pc_core::cluster::run_experiment;
use d2pc_core::config::{ExperimentConfig, ShardConfig};
use d2pc_core::oracle::{check_dependency_order, check_history};
use d2pc_core::time::SimTime;
use d2pc_core::topology::{DcId, ShardId};
use d2pc_core::trace::{DecisionPath, TraceEvent};
use d2pc_core::types::{CcMode, Decision, Protocol, Vote};
use d2pc_core::workload::WorkloadKind;
use d2pc_core::TxnId;
use std::collections::BTreeMap;
use std::time::Instant;

/// ± 0.1 ms anchors.
const ANCHOR_TOL_MS: f64 = 0.1;
/// Calculator/simulator agreement: 0.01 ms.
const AGREE_TOL: SimTime = SimTime(10);

fn pass(criterion: u32, detail: &str) {
    println!("acceptance criterion {criterion}: PASS ({detail})");
}

fn assert_runtime(criterion: u32, started: Instant, budget_secs: u64) {
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs() < budget_secs,
        "criterion {criterion} exceeded its {budget_secs}s budget: {elapsed:?}"
    );
}

fn outcomes(trace: &d2pc_core::trace::Trace) -> Vec<(u32, TxnId, Decision, u32)> {
    trace
        .events
        .iter()
        .filter_map(|e| match e {
            TraceEvent::TxnOutcome { client, tid, decision, retries, .. } => {
                Some((*client, *tid, *decision, *retries))
            }
            _ => None,
        })
        .collect()
}

/// Conjunction of each transaction's final (released) votes.
fn vote_conjunction(trace: &d2pc_core::trace::Trace) -> BTreeMap<TxnId, Decision> {
    let mut votes: BTreeMap<(TxnId, ShardId), Vote> = BTreeMap::new();
    for e in &trace.events {
        if let TraceEvent::VoteRecorded { shard, tid, vote, withheld, .. } = e {
            if !withheld {
                votes.insert((*tid, *shard), *vote);
            }
        }
    }
    let mut by_tid: BTreeMap<TxnId, Decision> = BTreeMap::new();
    for ((tid, _), vote) in votes {
        let d = by_tid.entry(tid).or_insert(Decision::Commit);
        if vote == Vote::Abort {
            *d = Decision::Abort;
        }
    }
    by_tid
}

fn decisions_made(trace: &d2pc_core::trace::Trace) -> BTreeMap<TxnId, (Decision, DecisionPath)> {
    let mut first = BTreeMap::new();
    for e in &trace.events {
        if let TraceEvent::DecisionMade { tid, decision, path, .. } = e {
            first.entry(*tid).or_insert((*decision, *path));
        }
    }
    first
}

/// Terminal chain outcomes per client, in order: true = committed.
fn chain_outcomes(trace: &d2pc_core::trace::Trace, retry_limit: u32) -> BTreeMap<u32, Vec<bool>> {
    let mut chains: BTreeMap<u32, Vec<bool>> = BTreeMap::new();
    for (client, _, decision, retries) in outcomes(trace) {
        match decision {
            Decision::Commit => chains.entry(client).or_default().push(true),
            Decision::Abort if retries >= retry_limit => {
                chains.entry(client).or_default().push(false)
            }
            Decision::Abort => {}
        }
    }
    chains
}

// ---------------------------------------------------------------------

/// Criterion 1 — Frankfurt CCP anchor: CCP at the Frankfurt leader for a
/// Hangzhou-initiated three-shard transaction is 30.0 ms.
#[test]
fn acceptance_01_frankfurt_ccp_anchor() {
    let t0 = Instant::now();
    let mut cfg = probe_config(Protocol::D2pc, three_dc_topology(), 0);
    cfg.cc = CcMode::Occ;
    let out = run_experiment(&cfg).unwrap();
    let rec = &out.records[0];
    assert_eq!(rec.outcome, Decision::Commit);
    // Shard 2 is led from Frankfurt in this topology.
    let (_, ccp_fra) = rec
        .ccp_ms
        .iter()
        .find(|(s, _)| *s == ShardId(2))
        .copied()
        .expect("Frankfurt leader recorded a CCP");
    assert!(
        (ccp_fra - 30.0).abs() <= ANCHOR_TOL_MS,
        "Frankfurt CCP {ccp_fra} ms, expected 30.0 +/- {ANCHOR_TOL_MS}"
    );
    assert_runtime(1, t0, 1);
    pass(1, &format!("simulated Frankfurt CCP = {ccp_fra:.3} ms"));
}

/// Criterion 2 — 1-RTT commit anchor with a replica co-located with the
/// correspondent coordinator: 231 ms for a Hangzhou client, 151 ms for a
/// San Francisco one.
#[test]
fn acceptance_02_one_rtt_commit_anchor() {
    let t0 = Instant::now();
    let mut got = Vec::new();
    for (client_ix, expect_ms) in [(0u32, 231.0), (1u32, 151.0)] {
        let cfg = probe_config(Protocol::D2pc, three_dc_topology(), client_ix);
        let out = run_experiment(&cfg).unwrap();
        let rec = &out.records[0];
        assert_eq!(rec.outcome, Decision::Commit);
        assert!(
            (rec.commit_latency_ms - expect_ms).abs() <= ANCHOR_TOL_MS,
            "client dc {client_ix}: commit latency {} ms, expected {expect_ms}",
            rec.commit_latency_ms
        );
        got.push(rec.commit_latency_ms);
    }
    assert_runtime(2, t0, 1);
    pass(2, &format!("Hangzhou {:.3} ms, San Francisco {:.3} ms", got[0], got[1]));
}

/// Criterion 3 — layered baseline anchor (382 ms for a Hangzhou-initiated
/// three-shard transaction) and exact calculator/simulator agreement over
/// every client placement and participant subset of the five-DC matrix.
#[test]
fn acceptance_03_layered_anchor_and_agreement() {
    let t0 = Instant::now();
    let cfg = probe_config(Protocol::Layered, three_dc_topology(), 0);
    let out = run_experiment(&cfg).unwrap();
    let rec = &out.records[0];
    assert!(
        (rec.commit_latency_ms - 382.0).abs() <= ANCHOR_TOL_MS,
        "layered latency {} ms, expected 382.0",
        rec.commit_latency_ms
    );

    let all = [HZ, BJ, SF, VA, FRA];
    let mut combos = 0;
    for mask in 1u32..(1 << 5) {
        let participants: Vec<usize> =
            all.iter().copied().filter(|&d| mask & (1 << d) != 0).collect();
        for &client in &all {
            for protocol in [Protocol::Layered, Protocol::D2pc] {
                let (latency, ccp) = run_five_dc_probe(protocol, &participants, client);
                let shards_cfg: Vec<ShardConfig> = participants
                    .iter()
                    .map(|&p| ShardConfig {
                        leader: dc_name(p),
                        replicas: all.iter().map(|&d| dc_name(d)).collect(),
                    })
                    .collect();
                let probe = probe_config(protocol, topology_over(&all, shards_cfg), client as u32);
                let topo = probe.build_topology().unwrap();
                let analytic = Analytic::new(&topo);
                let shard_ids: Vec<ShardId> =
                    (0..participants.len() as u32).map(ShardId).collect();
                let a = DcId(client as u8);
                let expect = analytic.commit_latency(protocol, a, &shard_ids).unwrap();
                assert!(
                    latency.abs_diff(expect) <= AGREE_TOL,
                    "{protocol:?} a={client} p={participants:?}: sim {latency} vs calc {expect}"
                );
                if protocol == Protocol::D2pc {
                    let leader_dcs: Vec<DcId> =
                        participants.iter().map(|&p| DcId(p as u8)).collect();
                    for (shard, got_ccp) in &ccp {
                        let expect =
                            analytic.ccp_d2pc(a, leader_dcs[shard.index()], &leader_dcs).unwrap();
                        assert!(
                            got_ccp.abs_diff(expect) <= AGREE_TOL,
                            "ccp a={client} b={} p={participants:?}: sim {got_ccp} vs calc {expect}",
                            leader_dcs[shard.index()],
                        );
                    }
                }
                combos += 1;
            }
        }
    }
    assert_eq!(combos, 31 * 5 * 2);
    assert_runtime(3, t0, 10);
    pass(
        3,
        &format!(
            "layered anchor {:.3} ms; calculator = simulator over {combos} combinations",
            rec.commit_latency_ms
        ),
    );
}

/// Criterion 4 — path agreement: with the fast path disabled by crashing
/// every co-coordinator outside the client datacenter, a thousand
/// transactions all resolve through the slow path with decisions equal to
/// the vote-conjunction oracle, and a matched fast-path run over the same
/// seed reaches the same per-chain outcomes.
#[test]
fn acceptance_04_fast_slow_path_agreement() {
    let t0 = Instant::now();
    let all = [HZ, BJ, SF, VA, FRA];
    let replica_names: Vec<String> = [HZ, SF, FRA].iter().map(|&d| dc_name(d)).collect();
    let topo = topology_over(
        &all,
        [HZ, SF, FRA]
            .iter()
            .map(|&d| ShardConfig { leader: dc_name(d), replicas: replica_names.clone() })
            .collect(),
    );
    let mut w = workload(WorkloadKind::Ycsbt, 10, 1000);
    w.zipf_theta = 0.0;
    w.keys_per_shard = 100_000;
    w.clients_per_dc = Some(vec![0, 10, 0, 0, 0]); // all clients in Beijing
    let mut cfg = ExperimentConfig {
        seed: 20,
        protocol: Protocol::D2pc,
        cc: CcMode::Occ,
        read_opt: true,
        coordinator_groups: 1,
        processing_delay_ms: 0.0,
        recovery_timeout_ms: None,
        dissemination_step_ms: None,
        record_messages: false,
        topology: topo,
        workload: w,
        failures: vec![],
    };
    let fast = run_experiment(&cfg).unwrap();
    for dc in [HZ, SF, FRA, VA] {
        cfg.failures.push(crash(0.0, &format!("cocoord:0:{}", dc_name(dc))));
    }
    let slow = run_experiment(&cfg).unwrap();

    // Every transaction terminated, decisions all on the slow path and all
    // equal to the vote conjunction.
    let slow_decisions = decisions_made(&slow.trace);
    let oracle = vote_conjunction(&slow.trace);
    assert_eq!(slow.summary.issued, 1000);
    let mut slow_path_count = 0;
    for (tid, (decision, path)) in &slow_decisions {
        assert_eq!(
            oracle.get(tid),
            Some(decision),
            "{tid} decided {decision}, votes say otherwise"
        );
        if *path == DecisionPath::Slow {
            slow_path_count += 1;
        }
    }
    assert_eq!(
        slow_path_count,
        slow_decisions.len(),
        "with no reachable co-coordinator forwarders every decision is slow-path"
    );

    // Matched fast-path run: same votes, same per-chain outcomes.
    let fast_decisions = decisions_made(&fast.trace);
    for (tid, (decision, _)) in &fast_decisions {
        assert_eq!(vote_conjunction(&fast.trace).get(tid), Some(decision));
    }
    assert_eq!(
        chain_outcomes(&fast.trace, 10),
        chain_outcomes(&slow.trace, 10),
        "fast and slow paths reduce the same votes to the same outcomes"
    );
    assert_runtime(4, t0, 30);
    pass(4, &format!("{slow_path_count} slow-path decisions match the vote oracle and the fast run"));
}

/// Criterion 5 — recovery safety: correspondent crashes after partial
/// dissemination (Case 1) and before any dissemination (Case 2) across 100
/// randomized schedules; every recovered decision equals the vote oracle.
#[test]
fn acceptance_05_recovery_safety() {
    let t0 = Instant::now();
    let mut case1 = 0u32;
    let mut case2 = 0u32;
    for i in 0..100u64 {
        // Stratified random crash times: half before the decision (~231 ms),
        // half inside the staged dissemination window (236..241 ms).
        let crash_ms = if i % 2 == 0 {
            50.0 + (i as f64 * 1.81) % 180.0
        } else {
            236.2 + (i as f64 * 0.047) % 4.5
        };
        let mut cfg = probe_config(Protocol::D2pc, three_dc_topology(), 0);
        cfg.seed = 100 + i;
        cfg.dissemination_step_ms = Some(5.0);
        cfg.failures.push(crash(crash_ms, &format!("cocoord:0:{}", dc_name(HZ))));
        let out = run_experiment(&cfg).unwrap();

        let outs = outcomes(&out.trace);
        assert_eq!(outs.len(), 1, "crash at {crash_ms}: client must learn an outcome");
        let decision = outs[0].2;
        let oracle = vote_conjunction(&out.trace);
        let all_decisions = decisions_made(&out.trace);
        for (tid, (d, _)) in &all_decisions {
            assert_eq!(oracle.get(tid), Some(d), "crash at {crash_ms}: decision != votes");
        }
        assert_eq!(decision, Decision::Commit, "probe transactions always commit");

        let recovered_kinds: Vec<DecisionPath> = out
            .trace
            .events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::DecisionMade { path, .. } => Some(*path),
                _ => None,
            })
            .collect();
        if recovered_kinds.contains(&DecisionPath::RecoveredDecision) {
            case1 += 1;
        }
        if recovered_kinds.contains(&DecisionPath::Termination) {
            case2 += 1;
        }
    }
    assert!(case1 > 0, "no schedule exercised Case 1 (adopt an existing decision)");
    assert!(case2 > 0, "no schedule exercised Case 2 (termination protocol)");
    assert_runtime(5, t0, 60);
    pass(5, &format!("100/100 recoveries match the vote oracle ({case1} Case-1, {case2} Case-2)"));
}

fn oracle_run(
    seed: u64,
    protocol: Protocol,
    cc: CcMode,
    zipf: f64,
    clients: u32,
    txns: u64,
    keys_per_shard: u64,
    groups: u32,
) -> d2pc_core::cluster::RunOutput {
    let mut w = workload(WorkloadKind::Retwis, clients, txns);
    w.zipf_theta = zipf;
    w.keys_per_shard = keys_per_shard;
    w.retry_limit = 25;
    let cfg = ExperimentConfig {
        seed,
        protocol,
        cc,
        read_opt: true,
        coordinator_groups: groups,
        processing_delay_ms: 0.0,
        recovery_timeout_ms: None,
        dissemination_step_ms: None,
        record_messages: false,
        topology: three_dc_topology(),
        workload: w,
        failures: vec![],
    };
    run_experiment(&cfg).unwrap()
}

/// Criteria 6 and 7 — history oracles over 200 randomized runs across
/// Zipf {0, 0.7, 0.9} x {2pl, occ} x {d2pc, layered}: serializable, atomic,
/// recoverable everywhere; and in every decentralized-commit trace, readers
/// of precommitted writes commit after their writers while aborted writers
/// cascade-abort their readers.
#[test]
fn acceptance_06_07_history_oracles_and_dependency_order() {
    let t0 = Instant::now();
    let zipfs = [0.0, 0.7, 0.9];
    let ccs = [CcMode::TwoPl, CcMode::Occ];
    let protocols = [Protocol::D2pc, Protocol::Layered];
    let mut runs = 0;
    let mut d2pc_traces = 0;
    let mut wr_deps_seen = 0usize;
    for i in 0..200u64 {
        let zipf = zipfs[(i % 3) as usize];
        let cc = ccs[(i % 2) as usize];
        let protocol = protocols[((i / 2) % 2) as usize];
        let clients = 3 + (i * 7 % 48) as u32; // up to 50
        let txns = 60 + (i * 131) % 440; // up to 500 per run
        let keys = [40, 200, 2000][(i % 3) as usize];
        let out = run_experiment(&{
            let mut w = workload(WorkloadKind::Retwis, clients, txns);
            w.zipf_theta = zipf;
            w.keys_per_shard = keys;
            w.retry_limit = 25;
            ExperimentConfig {
                seed: 1000 + i,
                protocol,
                cc,
                read_opt: i % 5 != 0,
                coordinator_groups: 1,
                processing_delay_ms: 0.0,
                recovery_timeout_ms: None,
                dissemination_step_ms: None,
                record_messages: false,
                topology: three_dc_topology(),
                workload: w,
                failures: vec![],
            }
        })
        .unwrap();
        let report = check_history(&out.trace);
        assert!(
            report.all_hold(),
            "run {i} (zipf {zipf}, {cc:?}, {protocol:?}): {:?}",
            report.violations
        );
        if protocol == Protocol::D2pc {
            if let Err(errs) = check_dependency_order(&out.trace) {
                panic!("run {i}: dependency order violated: {errs:?}");
            }
            d2pc_traces += 1;
            wr_deps_seen += out
                .trace
                .events
                .iter()
                .filter(|e| matches!(e, TraceEvent::WrDependency { .. }))
                .count();
        }
        runs += 1;
    }
    assert_eq!(runs, 200);
    assert!(
        wr_deps_seen > 100,
        "the workloads must actually exercise precommit reads (saw {wr_deps_seen})"
    );
    assert_runtime(6, t0, 600);
    pass(6, &format!("200/200 runs serializable, atomic, recoverable"));
    pass(
        7,
        &format!("dependency order held over {d2pc_traces} traces ({wr_deps_seen} wr dependencies)"),
    );
}

/// Criterion 8 — directional performance reproduction at Zipf 0.7 with 150
/// clients: decentralized commit beats the layered baseline in throughput
/// under both concurrency controls, and its mean concurrency-control period
/// is under 0.6x the layered one.
#[test]
fn acceptance_08_directional_throughput() {
    let t0 = Instant::now();
    let run = |protocol, cc| oracle_run(777, protocol, cc, 0.7, 150, 4000, 100_000, 1);
    let d2pc_occ = run(Protocol::D2pc, CcMode::Occ);
    let layered_occ = run(Protocol::Layered, CcMode::Occ);
    let d2pc_2pl = run(Protocol::D2pc, CcMode::TwoPl);
    let layered_2pl = run(Protocol::Layered, CcMode::TwoPl);

    let thr = |o: &d2pc_core::cluster::RunOutput| o.summary.throughput_per_sec;
    let ccp = |o: &d2pc_core::cluster::RunOutput| o.summary.mean_ccp_ms;
    assert!(
        thr(&d2pc_occ) > thr(&layered_occ),
        "OCC throughput: d2pc {} <= layered {}",
        thr(&d2pc_occ),
        thr(&layered_occ)
    );
    assert!(
        thr(&d2pc_2pl) > thr(&layered_2pl),
        "2PL throughput: d2pc {} <= layered {}",
        thr(&d2pc_2pl),
        thr(&layered_2pl)
    );
    assert!(
        ccp(&d2pc_occ) < 0.6 * ccp(&layered_occ),
        "OCC mean CCP: d2pc {} vs layered {}",
        ccp(&d2pc_occ),
        ccp(&layered_occ)
    );
    assert!(
        ccp(&d2pc_2pl) < 0.6 * ccp(&layered_2pl),
        "2PL mean CCP: d2pc {} vs layered {}",
        ccp(&d2pc_2pl),
        ccp(&layered_2pl)
    );
    assert_runtime(8, t0, 120);
    pass(
        8,
        &format!(
            "throughput {:.0}>{:.0} (OCC) {:.0}>{:.0} (2PL) txn/s; mean CCP {:.0}/{:.0} and {:.0}/{:.0} ms",
            thr(&d2pc_occ),
            thr(&layered_occ),
            thr(&d2pc_2pl),
            thr(&layered_2pl),
            ccp(&d2pc_occ),
            ccp(&layered_occ),
            ccp(&d2pc_2pl),
            ccp(&layered_2pl),
        ),
    );
}

/// Criterion 9 — starvation freedom of the read optimization under 2PL:
/// with the enforced second execution no adversarial long reader exceeds 5
/// retries; with the rule disabled at least one transaction does.
#[test]
fn acceptance_09_starvation_freedom() {
    let t0 = Instant::now();
    let run = |second_execution: bool| {
        let mut w = workload(WorkloadKind::Retwis, 6, 300);
        w.zipf_theta = 0.0;
        w.keys_per_shard = 100;
        w.retry_limit = 30;
        w.long_read_percent = 50;
        w.long_read_keys = 50;
        w.second_execution = second_execution;
        let cfg = ExperimentConfig {
            seed: 4242,
            protocol: Protocol::D2pc,
            cc: CcMode::TwoPl,
            read_opt: true,
            coordinator_groups: 1,
            processing_delay_ms: 0.0,
            recovery_timeout_ms: None,
            dissemination_step_ms: None,
            record_messages: false,
            topology: three_dc_topology(),
            workload: w,
            failures: vec![],
        };
        run_experiment(&cfg).unwrap()
    };
    let with_rule = run(true);
    assert!(
        with_rule.summary.max_retries <= 5,
        "second execution enabled: max retries {} > 5",
        with_rule.summary.max_retries
    );
    let without_rule = run(false);
    assert!(
        without_rule.summary.max_retries > 5,
        "rule disabled: expected starving retries, max was {}",
        without_rule.summary.max_retries
    );
    assert_runtime(9, t0, 120);
    pass(
        9,
        &format!(
            "max retries {} with the second execution, {} without",
            with_rule.summary.max_retries, without_rule.summary.max_retries
        ),
    );
}

/// Criterion 10 — co-coordinator sharding: two groups split transactions
/// evenly and the correctness criteria keep holding.
#[test]
fn acceptance_10_cocoordinator_sharding() {
    let t0 = Instant::now();
    // Even partition over 10^4 transaction ids.
    let mut counts = [0u32; 2];
    for counter in 0..10_000u64 {
        counts[d2pc_core::protocol::route_to_group(TxnId::new(3, counter), 2) as usize] += 1;
    }
    let spread = (counts[0] as f64 - counts[1] as f64).abs() / 10_000.0;
    assert!(spread <= 0.05, "group imbalance {spread}");

    // Correctness re-checks at N=2: oracles and dependency order...
    for i in 0..20u64 {
        let out = oracle_run(
            9000 + i,
            Protocol::D2pc,
            [CcMode::Occ, CcMode::TwoPl][(i % 2) as usize],
            [0.0, 0.7, 0.9][(i % 3) as usize],
            10,
            150,
            200,
            2,
        );
        let report = check_history(&out.trace);
        assert!(report.all_hold(), "N=2 run {i}: {:?}", report.violations);
        assert!(check_dependency_order(&out.trace).is_ok());
    }

    // ...slow-path agreement at N=2...
    {
        let all = [HZ, BJ, SF, VA, FRA];
        let replica_names: Vec<String> = [HZ, SF, FRA].iter().map(|&d| dc_name(d)).collect();
        let topo = topology_over(
            &all,
            [HZ, SF, FRA]
                .iter()
                .map(|&d| ShardConfig { leader: dc_name(d), replicas: replica_names.clone() })
                .collect(),
        );
        let mut w = workload(WorkloadKind::Ycsbt, 4, 120);
        w.clients_per_dc = Some(vec![0, 4, 0, 0, 0]);
        w.keys_per_shard = 100_000;
        let mut cfg = ExperimentConfig {
            seed: 31,
            protocol: Protocol::D2pc,
            cc: CcMode::Occ,
            read_opt: true,
            coordinator_groups: 2,
            processing_delay_ms: 0.0,
            recovery_timeout_ms: None,
            dissemination_step_ms: None,
            record_messages: false,
            topology: topo,
            workload: w,
            failures: vec![],
        };
        let fast = run_experiment(&cfg).unwrap();
        for dc in [HZ, SF, FRA, VA] {
            for group in 0..2 {
                cfg.failures.push(crash(0.0, &format!("cocoord:{group}:{}", dc_name(dc))));
            }
        }
        let slow = run_experiment(&cfg).unwrap();
        let oracle = vote_conjunction(&slow.trace);
        for (tid, (d, _)) in decisions_made(&slow.trace) {
            assert_eq!(oracle.get(&tid), Some(&d));
        }
        assert_eq!(chain_outcomes(&fast.trace, 10), chain_outcomes(&slow.trace, 10));
    }

    // ...and recovery at N=2 (both groups' correspondents crash).
    {
        let mut cfg = probe_config(Protocol::D2pc, three_dc_topology(), 0);
        cfg.coordinator_groups = 2;
        cfg.dissemination_step_ms = Some(5.0);
        cfg.workload.txn_limit = Some(2); // one transaction per group
        cfg.failures.push(crash(100.0, &format!("cocoord:0:{}", dc_name(HZ))));
        cfg.failures.push(crash(100.0, &format!("cocoord:1:{}", dc_name(HZ))));
        let out = run_experiment(&cfg).unwrap();
        let outs = outcomes(&out.trace);
        assert_eq!(outs.len(), 2);
        let oracle = vote_conjunction(&out.trace);
        for (tid, (d, _)) in decisions_made(&out.trace) {
            assert_eq!(oracle.get(&tid), Some(&d));
        }
    }
    assert_runtime(10, t0, 60);
    pass(10, &format!("groups balanced ({} / {}); criteria 4-7 hold at N=2", counts[0], counts[1]));
}
