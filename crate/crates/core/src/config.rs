//! Experiment configuration: one structured document (TOML) with strict
//! field checking; unknown fields are rejected.

use crate::error::ConfigError;
use crate::simnet::{FailureEntry, FailureSchedule, FaultAction};
use crate::time::SimTime;
use crate::topology::{DcId, LatencyMatrix, NodeId, ShardId, ShardPlacement, Topology};
use crate::types::{CcMode, Protocol};
use crate::workload::WorkloadKind;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub protocol: Protocol,
    pub cc: CcMode,
    #[serde(default = "default_true")]
    pub read_opt: bool,
    #[serde(default = "default_groups")]
    pub coordinator_groups: u32,
    #[serde(default)]
    pub processing_delay_ms: f64,
    /// Patience before failure handling kicks in; defaults to four times the
    /// largest one-way delay of the matrix.
    #[serde(default)]
    pub recovery_timeout_ms: Option<f64>,
    /// Gap between the staged off-path decision notifications.
    #[serde(default)]
    pub dissemination_step_ms: Option<f64>,
    /// Keep per-message delivery records in the trace (large).
    #[serde(default)]
    pub record_messages: bool,
    pub topology: TopologyConfig,
    pub workload: WorkloadConfig,
    #[serde(default)]
    pub failures: Vec<FailureConfig>,
}

fn default_true() -> bool {
    true
}

fn default_groups() -> u32 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub datacenters: Vec<String>,
    /// Full symmetric RTT matrix in milliseconds.
    pub rtt_ms: Vec<Vec<f64>>,
    pub shards: Vec<ShardConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShardConfig {
    pub leader: String,
    pub replicas: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    pub kind: WorkloadKind,
    #[serde(default)]
    pub zipf_theta: f64,
    pub clients: u32,
    /// Explicit client placement (one count per datacenter); round-robin
    /// across datacenters when omitted.
    #[serde(default)]
    pub clients_per_dc: Option<Vec<u32>>,
    #[serde(default)]
    pub txn_limit: Option<u64>,
    #[serde(default)]
    pub duration_ms: Option<f64>,
    /// Optional override of the top-level read_opt flag.
    #[serde(default)]
    pub read_optimization: Option<bool>,
    #[serde(default = "default_retry_limit")]
    pub retry_limit: u32,
    #[serde(default = "default_keys_per_shard")]
    pub keys_per_shard: u64,
    /// Disable the 2PL second-execution rule (regression experiments only).
    #[serde(default = "default_true")]
    pub second_execution: bool,
    /// Long-read adversarial mix: percentage of transactions that become
    /// large read-only scans of `long_read_keys` keys.
    #[serde(default)]
    pub long_read_percent: u32,
    #[serde(default = "default_long_read_keys")]
    pub long_read_keys: usize,
}

fn default_retry_limit() -> u32 {
    10
}

fn default_keys_per_shard() -> u64 {
    100_000
}

fn default_long_read_keys() -> usize {
    50
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureConfig {
    pub at_ms: f64,
    /// `replica:<shard>:<dc-name>`, `cocoord:<group>:<dc-name>`, or
    /// `client:<id>` (clients named for completeness).
    pub node: String,
    pub action: FailureActionConfig,
    #[serde(default)]
    pub shard: Option<u32>,
    #[serde(default)]
    pub new_leader: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureActionConfig {
    Crash,
    Recover,
    ReassignLeader,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<ExperimentConfig, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.build_topology()?;
        if self.coordinator_groups == 0 {
            return Err(ConfigError::Invalid("coordinator_groups must be at least 1".into()));
        }
        if self.workload.clients == 0 {
            return Err(ConfigError::Workload("at least one client required".into()));
        }
        if self.workload.txn_limit.is_none() && self.workload.duration_ms.is_none() {
            return Err(ConfigError::Workload("set txn_limit or duration_ms".into()));
        }
        if !(0.0..1.0).contains(&self.workload.zipf_theta) {
            return Err(ConfigError::Workload(format!(
                "zipf_theta {} outside [0, 1)",
                self.workload.zipf_theta
            )));
        }
        if let Some(per_dc) = &self.workload.clients_per_dc {
            if per_dc.len() != self.topology.datacenters.len() {
                return Err(ConfigError::Workload(
                    "clients_per_dc needs one entry per datacenter".into(),
                ));
            }
            if per_dc.iter().sum::<u32>() != self.workload.clients {
                return Err(ConfigError::Workload(
                    "clients_per_dc entries must sum to clients".into(),
                ));
            }
        }
        self.build_failure_schedule(&self.build_topology()?)?;
        Ok(())
    }

    pub fn read_opt_effective(&self) -> bool {
        self.workload.read_optimization.unwrap_or(self.read_opt)
    }

    pub fn build_topology(&self) -> Result<Topology, ConfigError> {
        let matrix = LatencyMatrix::from_rtt_ms(&self.topology.rtt_ms)?;
        let names = self.topology.datacenters.clone();
        let mut shards = Vec::new();
        let dc_of = |name: &str| -> Result<DcId, ConfigError> {
            names
                .iter()
                .position(|n| n == name)
                .map(|i| DcId(i as u8))
                .ok_or_else(|| ConfigError::UnknownDatacenter(name.to_string()))
        };
        for s in &self.topology.shards {
            let leader = dc_of(&s.leader)?;
            let replicas =
                s.replicas.iter().map(|r| dc_of(r)).collect::<Result<Vec<_>, _>>()?;
            shards.push(ShardPlacement { leader, replicas });
        }
        Topology::new(names, matrix, shards)
    }

    /// Client placement: explicit counts or round-robin over datacenters.
    pub fn client_dcs(&self, topology: &Topology) -> Vec<DcId> {
        match &self.workload.clients_per_dc {
            Some(per_dc) => {
                let mut out = Vec::new();
                for (i, &count) in per_dc.iter().enumerate() {
                    for _ in 0..count {
                        out.push(DcId(i as u8));
                    }
                }
                out
            }
            None => (0..self.workload.clients)
                .map(|i| DcId((i as usize % topology.dc_count()) as u8))
                .collect(),
        }
    }

    pub fn build_failure_schedule(
        &self,
        topology: &Topology,
    ) -> Result<FailureSchedule, ConfigError> {
        let mut entries = Vec::new();
        let client_dcs = self.client_dcs(topology);
        for f in &self.failures {
            let node = parse_node(&f.node, topology, &client_dcs)?;
            let action = match f.action {
                FailureActionConfig::Crash => FaultAction::Crash,
                FailureActionConfig::Recover => FaultAction::Recover,
                FailureActionConfig::ReassignLeader => {
                    let shard = f.shard.ok_or_else(|| {
                        ConfigError::FailureSchedule("reassign_leader needs shard".into())
                    })?;
                    let name = f.new_leader.as_deref().ok_or_else(|| {
                        ConfigError::FailureSchedule("reassign_leader needs new_leader".into())
                    })?;
                    let dc = topology.dc_by_name(name)?;
                    if shard as usize >= topology.shards.len() {
                        return Err(ConfigError::FailureSchedule(format!(
                            "unknown shard {shard}"
                        )));
                    }
                    if !topology.shard(ShardId(shard)).has_replica_in(dc) {
                        return Err(ConfigError::FailureSchedule(format!(
                            "shard {shard} has no replica in {name}"
                        )));
                    }
                    FaultAction::ReassignLeader { shard: ShardId(shard), new_leader: dc }
                }
            };
            entries.push(FailureEntry { at: SimTime::from_ms(f.at_ms), node, action });
        }
        entries.sort_by_key(|e| e.at);
        FailureSchedule::new(entries)
    }
}

fn parse_node(
    spec: &str,
    topology: &Topology,
    client_dcs: &[DcId],
) -> Result<NodeId, ConfigError> {
    let parts: Vec<&str> = spec.split(':').collect();
    let err = || ConfigError::FailureSchedule(format!("cannot parse node {spec:?}"));
    match parts.as_slice() {
        ["replica", shard, dc] => {
            let shard: u32 = shard.parse().map_err(|_| err())?;
            let dc = topology.dc_by_name(dc)?;
            if shard as usize >= topology.shards.len()
                || !topology.shard(ShardId(shard)).has_replica_in(dc)
            {
                return Err(ConfigError::FailureSchedule(format!(
                    "no replica of shard {shard} in {spec:?}"
                )));
            }
            Ok(NodeId::Replica { shard: ShardId(shard), dc })
        }
        ["cocoord", group, dc] => {
            let group: u32 = group.parse().map_err(|_| err())?;
            let dc = topology.dc_by_name(dc)?;
            Ok(NodeId::CoCoord { group, dc })
        }
        ["client", id] => {
            let id: u32 = id.parse().map_err(|_| err())?;
            let dc = *client_dcs.get(id as usize).ok_or_else(err)?;
            Ok(NodeId::Client { id, dc })
        }
        _ => Err(err()),
    }
}
