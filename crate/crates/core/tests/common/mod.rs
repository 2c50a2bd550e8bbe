//! Shared builders for integration tests: canonical topologies and probe
//! configurations.

#![allow(dead_code)]

use d2pc_core::config::{
    ExperimentConfig, FailureActionConfig, FailureConfig, ShardConfig, TopologyConfig,
    WorkloadConfig,
};
use d2pc_core::topology::{five_dc_names, five_dc_rtt_ms};
use d2pc_core::types::{CcMode, Decision, Protocol};
use d2pc_core::workload::WorkloadKind;

pub const HZ: usize = 0;
pub const BJ: usize = 1;
pub const SF: usize = 2;
pub const VA: usize = 3;
pub const FRA: usize = 4;

/// Submatrix topology over a subset of the five datacenters.
pub fn topology_over(dcs: &[usize], shards: Vec<ShardConfig>) -> TopologyConfig {
    let names = five_dc_names();
    let full = five_dc_rtt_ms();
    TopologyConfig {
        datacenters: dcs.iter().map(|&i| names[i].clone()).collect(),
        rtt_ms: dcs.iter().map(|&i| dcs.iter().map(|&j| full[i][j]).collect()).collect(),
        shards,
    }
}

pub fn dc_name(i: usize) -> String {
    five_dc_names()[i].clone()
}

/// Three-datacenter deployment (Hangzhou, San Francisco, Frankfurt), one
/// shard per datacenter, every shard replicated in all three.
pub fn three_dc_topology() -> TopologyConfig {
    let dcs = [HZ, SF, FRA];
    let names: Vec<String> = dcs.iter().map(|&i| dc_name(i)).collect();
    topology_over(
        &dcs,
        names
            .iter()
            .map(|n| ShardConfig { leader: n.clone(), replicas: names.clone() })
            .collect(),
    )
}

pub fn workload(kind: WorkloadKind, clients: u32, txns: u64) -> WorkloadConfig {
    WorkloadConfig {
        kind,
        zipf_theta: 0.0,
        clients,
        clients_per_dc: None,
        txn_limit: Some(txns),
        duration_ms: None,
        read_optimization: None,
        retry_limit: 10,
        keys_per_shard: 10_000,
        second_execution: true,
        long_read_percent: 0,
        long_read_keys: 50,
    }
}

/// Single client in `client_dc` running one contention-free write probe.
pub fn probe_config(
    protocol: Protocol,
    topology: TopologyConfig,
    client_dc_index_in_topology: u32,
) -> ExperimentConfig {
    let dc_count = topology.datacenters.len();
    let mut per_dc = vec![0u32; dc_count];
    per_dc[client_dc_index_in_topology as usize] = 1;
    let mut w = workload(WorkloadKind::Probe, 1, 1);
    w.clients_per_dc = Some(per_dc);
    ExperimentConfig {
        seed: 7,
        protocol,
        cc: CcMode::Occ,
        read_opt: true,
        coordinator_groups: 1,
        processing_delay_ms: 0.0,
        recovery_timeout_ms: None,
        dissemination_step_ms: None,
        record_messages: false,
        topology,
        workload: w,
        failures: vec![],
    }
}

/// Runs a single contention-free probe over participant shards led from
/// `participants` (replicas in every one of the five datacenters), client in
/// `client`, and returns (client latency, per-shard CCP).
pub fn run_five_dc_probe(
    protocol: Protocol,
    participants: &[usize],
    client: usize,
) -> (d2pc_core::SimTime, Vec<(d2pc_core::ShardId, d2pc_core::SimTime)>) {
    use d2pc_core::cluster::run_experiment;
    use d2pc_core::SimTime;
    let all: Vec<usize> = vec![HZ, BJ, SF, VA, FRA];
    let shards = participants
        .iter()
        .map(|&p| ShardConfig {
            leader: dc_name(p),
            replicas: all.iter().map(|&d| dc_name(d)).collect(),
        })
        .collect();
    let topology = topology_over(&all, shards);
    let cfg = probe_config(protocol, topology, client as u32);
    let out = run_experiment(&cfg).expect("probe runs");
    assert_eq!(out.records.len(), 1);
    let rec = &out.records[0];
    assert_eq!(rec.outcome, Decision::Commit);
    (
        SimTime::from_ms(rec.commit_latency_ms),
        rec.ccp_ms.iter().map(|&(s, ms)| (s, SimTime::from_ms(ms))).collect(),
    )
}

pub fn crash(at_ms: f64, node: &str) -> FailureConfig {
    FailureConfig {
        at_ms,
        node: node.to_string(),
        action: FailureActionConfig::Crash,
        shard: None,
        new_leader: None,
    }
}

pub fn recover(at_ms: f64, node: &str) -> FailureConfig {
    FailureConfig {
        at_ms,
        node: node.to_string(),
        action: FailureActionConfig::Recover,
        shard: None,
        new_leader: None,
    }
}

pub fn reassign(at_ms: f64, shard: u32, new_leader: &str) -> FailureConfig {
    FailureConfig {
        at_ms,
        node: format!("replica:{shard}:{new_leader}"),
        action: FailureActionConfig::ReassignLeader,
        shard: Some(shard),
        new_leader: Some(new_leader.to_string()),
    }
}
