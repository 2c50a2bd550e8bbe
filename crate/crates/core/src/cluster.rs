//! Experiment driver: builds a simulated cluster from a configuration,
//! implements the kernel's `World` dispatch, and runs workloads to
//! quiescence. A whole simulation instance owns its state exclusively, so
//! parameter sweeps can run many instances on different threads.

use crate::config::ExperimentConfig;
use crate::error::ConfigError;
use crate::metrics::{records_from_trace, summarize, MetricsRecord, SummaryReport};
use crate::protocol::client::ClientNode;
use crate::protocol::cocoord::CoCoordNode;
use crate::protocol::replica::ReplicaNode;
use crate::protocol::{Msg, ProtocolConfig, Routing};
use crate::replication::LogEntry;
use crate::simnet::{Kernel, StopCondition, World};
use crate::time::SimTime;
use crate::topology::{DcId, NodeId, ShardId, Topology};
use crate::trace::Trace;
use crate::types::Protocol;
use crate::workload::{client_rng, Generator, WorkloadKind};
use std::collections::BTreeMap;
use std::sync::Arc;

pub struct SimWorld {
    pub topology: Arc<Topology>,
    pub routing: Routing,
    pub replicas: BTreeMap<(ShardId, DcId), ReplicaNode>,
    pub cocoords: BTreeMap<(u32, DcId), CoCoordNode>,
    pub clients: BTreeMap<u32, ClientNode>,
}

impl World for SimWorld {
    type Msg = Msg;

    fn deliver(&mut self, net: &mut Kernel<Msg>, to: NodeId, from: NodeId, msg: Msg) {
        match to {
            NodeId::Replica { shard, dc } => {
                let node = self.replicas.get_mut(&(shard, dc)).expect("replica exists");
                node.handle(net, &self.routing, from, msg);
            }
            NodeId::CoCoord { group, dc } => {
                let node = self.cocoords.get_mut(&(group, dc)).expect("cocoord exists");
                node.handle(net, &self.routing, from, msg);
            }
            NodeId::Client { id, .. } => {
                let node = self.clients.get_mut(&id).expect("client exists");
                node.handle(net, &self.routing, from, msg);
            }
        }
    }

    fn on_crash(&mut self, _net: &mut Kernel<Msg>, node: NodeId) {
        match node {
            NodeId::Replica { shard, dc } => {
                self.replicas.get_mut(&(shard, dc)).expect("replica exists").wipe_volatile();
            }
            NodeId::CoCoord { group, dc } => {
                self.cocoords.get_mut(&(group, dc)).expect("cocoord exists").wipe_volatile();
            }
            NodeId::Client { .. } => {}
        }
    }

    /// Oracle leader election: the new leader inherits the quorum-committed
    /// prefix and re-drives everything undecided.
    fn on_reassign_leader(&mut self, net: &mut Kernel<Msg>, shard: ShardId, new_leader: DcId) {
        let placement = self.topology.shard(shard).clone();
        assert!(placement.has_replica_in(new_leader), "new leader must hold a replica");
        // Quorum-committed prefix across the durable logs of all replicas.
        let mut inherited: Vec<LogEntry> = Vec::new();
        {
            let logs: Vec<&ReplicaNode> =
                placement.replicas.iter().map(|dc| &self.replicas[&(shard, *dc)]).collect();
            let mut idx = 0u64;
            loop {
                let holders: Vec<&LogEntry> =
                    logs.iter().filter_map(|r| r.log().get(idx)).collect();
                if holders.len() < placement.quorum() {
                    break;
                }
                inherited.push(holders[0].clone());
                idx += 1;
            }
        }
        for dc in placement.replicas {
            let node = self.replicas.get_mut(&(shard, dc)).expect("replica exists");
            if dc != new_leader {
                node.demote();
            }
        }
        self.routing.set_leader(shard, new_leader);
        let node = self.replicas.get_mut(&(shard, new_leader)).expect("replica exists");
        node.promote(net, &self.routing, inherited);
    }
}

pub struct RunOutput {
    pub records: Vec<MetricsRecord>,
    pub summary: SummaryReport,
    pub trace: Trace,
    pub end: SimTime,
    pub events_processed: u64,
}

/// Builds the cluster for a config. Exposed separately so tests can drive
/// bespoke scenarios through the kernel directly.
pub fn build(cfg: &ExperimentConfig) -> Result<(Kernel<Msg>, SimWorld), ConfigError> {
    let topology = Arc::new(cfg.build_topology()?);
    let mut pcfg = ProtocolConfig::defaults_for(&topology);
    pcfg.protocol = cfg.protocol;
    pcfg.cc = cfg.cc;
    pcfg.read_opt = cfg.read_opt_effective();
    pcfg.groups = cfg.coordinator_groups;
    pcfg.retry_limit = cfg.workload.retry_limit;
    pcfg.second_execution = cfg.workload.second_execution;
    if let Some(ms) = cfg.recovery_timeout_ms {
        pcfg.recovery_timeout = SimTime::from_ms(ms);
    }
    if let Some(ms) = cfg.dissemination_step_ms {
        pcfg.dissemination_step = SimTime::from_ms(ms);
    }

    let mut net: Kernel<Msg> = Kernel::new(topology.matrix.clone(), cfg.record_messages);
    net.processing_delay = SimTime::from_ms(cfg.processing_delay_ms);
    let routing = Routing::from_topology(&topology);

    let mut replicas = BTreeMap::new();
    for shard in topology.shard_ids() {
        let placement = topology.shard(shard).clone();
        for dc in placement.replicas {
            let node =
                ReplicaNode::new(shard, dc, placement.leader == dc, pcfg.clone(), topology.clone());
            net.register(NodeId::Replica { shard, dc });
            replicas.insert((shard, dc), node);
        }
    }

    let mut cocoords = BTreeMap::new();
    if cfg.protocol == Protocol::D2pc {
        for group in 0..cfg.coordinator_groups {
            for dc in topology.dcs() {
                net.register(NodeId::CoCoord { group, dc });
                cocoords.insert((group, dc), CoCoordNode::new(group, dc, pcfg.clone(), topology.clone()));
            }
        }
    }

    let client_dcs = cfg.client_dcs(&topology);
    let shard_count = topology.shards.len() as u64;
    let probe_shards: Vec<u64> = (0..shard_count).collect();
    let mut clients = BTreeMap::new();
    let n = cfg.workload.clients as u64;
    let quota_of = |id: u64| -> u64 {
        match cfg.workload.txn_limit {
            Some(limit) => limit / n + u64::from(id < limit % n),
            None => u64::MAX,
        }
    };
    let deadline = cfg.workload.duration_ms.map(SimTime::from_ms);
    for (id, &dc) in client_dcs.iter().enumerate() {
        let id = id as u32;
        let mut generator = Generator::new(
            cfg.workload.kind,
            cfg.workload.zipf_theta,
            cfg.workload.keys_per_shard,
            shard_count,
            probe_shards.clone(),
        )?;
        if cfg.workload.kind != WorkloadKind::Probe {
            generator.long_read_percent = cfg.workload.long_read_percent;
            generator.long_read_keys = cfg.workload.long_read_keys;
        }
        let node = ClientNode::new(
            id,
            dc,
            pcfg.clone(),
            topology.clone(),
            client_rng(cfg.seed, id),
            generator,
            quota_of(id as u64),
            deadline,
        );
        net.register(NodeId::Client { id, dc });
        clients.insert(id, node);
    }

    Ok((net, SimWorld { topology, routing, replicas, cocoords, clients }))
}

/// Runs a configuration to quiescence and gathers metrics.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput, ConfigError> {
    let (mut net, mut world) = build(cfg)?;
    let schedule = cfg.build_failure_schedule(&world.topology)?;
    net.load_failures(&schedule);
    for client in world.clients.values_mut() {
        client.kick(&mut net);
    }
    let end = net.run(&mut world, StopCondition::Quiescence);
    assert!(
        net.events_processed() < 400_000_000,
        "run did not quiesce within the event budget"
    );
    let trace = std::mem::take(&mut net.trace);
    let records = records_from_trace(&trace, cfg.workload.retry_limit);
    let summary =
        summarize(&records, &trace, &world.topology, cfg.workload.retry_limit, end);
    Ok(RunOutput { records, summary, trace, end, events_processed: net.events_processed() })
}
