//! Datacenters, nodes, and the inter-datacenter latency matrix.

use crate::error::ConfigError;
use crate::time::SimTime;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Dense datacenter index, `0..D`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct DcId(pub u8);

impl DcId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for DcId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "dc{}", self.0)
    }
}

/// Dense shard index.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct ShardId(pub u32);

impl ShardId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ShardId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// Address of a simulated process. At most one replica per `(shard, dc)` and
/// one co-coordinator per `(group, dc)`; clients are numbered globally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeId {
    Client { id: u32, dc: DcId },
    Replica { shard: ShardId, dc: DcId },
    CoCoord { group: u32, dc: DcId },
}

impl NodeId {
    pub fn dc(&self) -> DcId {
        match *self {
            NodeId::Client { dc, .. } | NodeId::Replica { dc, .. } | NodeId::CoCoord { dc, .. } => {
                dc
            }
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Client { id, dc } => write!(f, "client:{id}@{dc}"),
            NodeId::Replica { shard, dc } => write!(f, "replica:{shard}@{dc}"),
            NodeId::CoCoord { group, dc } => write!(f, "cocoord:{group}@{dc}"),
        }
    }
}

/// Symmetric RTT matrix between datacenters, diagonal = intra-datacenter RTT.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyMatrix {
    rtt: Vec<Vec<SimTime>>,
}

impl LatencyMatrix {
    /// Builds and validates a matrix from RTTs in milliseconds.
    pub fn from_rtt_ms(rtt_ms: &[Vec<f64>]) -> Result<LatencyMatrix, ConfigError> {
        let d = rtt_ms.len();
        if d == 0 {
            return Err(ConfigError::Topology("empty latency matrix".into()));
        }
        let mut rtt = vec![vec![SimTime::ZERO; d]; d];
        for (i, row) in rtt_ms.iter().enumerate() {
            if row.len() != d {
                return Err(ConfigError::Topology(format!(
                    "latency matrix row {i} has {} entries, expected {d}",
                    row.len()
                )));
            }
            for (j, &ms) in row.iter().enumerate() {
                if !(ms > 0.0) || !ms.is_finite() {
                    return Err(ConfigError::Topology(format!(
                        "rtt[{i}][{j}] = {ms}; all entries must be positive"
                    )));
                }
                rtt[i][j] = SimTime::from_ms(ms);
            }
        }
        for i in 0..d {
            for j in 0..d {
                if rtt[i][j] != rtt[j][i] {
                    return Err(ConfigError::Topology(format!(
                        "latency matrix is not symmetric at [{i}][{j}]"
                    )));
                }
                if i != j && rtt[i][i] >= rtt[i][j] {
                    return Err(ConfigError::Topology(format!(
                        "intra-datacenter rtt[{i}][{i}] must be smaller than rtt[{i}][{j}]"
                    )));
                }
            }
        }
        Ok(LatencyMatrix { rtt })
    }

    pub fn len(&self) -> usize {
        self.rtt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rtt.is_empty()
    }

    pub fn rtt(&self, a: DcId, b: DcId) -> SimTime {
        self.rtt[a.index()][b.index()]
    }

    /// Half the RTT: the delay of a single message between the datacenters.
    /// The diagonal case is never zero; a message between co-located machines
    /// still crosses the datacenter network.
    pub fn one_way(&self, a: DcId, b: DcId) -> SimTime {
        self.rtt(a, b) / 2
    }

    /// Largest one-way delay anywhere in the matrix.
    pub fn max_one_way(&self) -> SimTime {
        let mut max = SimTime::ZERO;
        for row in &self.rtt {
            for &v in row {
                if v / 2 > max {
                    max = v / 2;
                }
            }
        }
        max
    }
}

/// Placement of one shard: which datacenters hold replicas and which one
/// currently hosts the leader.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardPlacement {
    pub leader: DcId,
    pub replicas: Vec<DcId>,
}

impl ShardPlacement {
    /// Tolerated failures: replicas are 2F+1.
    pub fn f(&self) -> usize {
        (self.replicas.len() - 1) / 2
    }

    pub fn quorum(&self) -> usize {
        self.f() + 1
    }

    pub fn has_replica_in(&self, dc: DcId) -> bool {
        self.replicas.contains(&dc)
    }
}

/// Static cluster layout: datacenter names, the latency matrix, and per-shard
/// replica placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub datacenter_names: Vec<String>,
    pub matrix: LatencyMatrix,
    pub shards: Vec<ShardPlacement>,
}

impl Topology {
    pub fn new(
        datacenter_names: Vec<String>,
        matrix: LatencyMatrix,
        shards: Vec<ShardPlacement>,
    ) -> Result<Topology, ConfigError> {
        if datacenter_names.len() != matrix.len() {
            return Err(ConfigError::Topology(format!(
                "{} datacenter names for a {}x{} matrix",
                datacenter_names.len(),
                matrix.len(),
                matrix.len()
            )));
        }
        for (i, a) in datacenter_names.iter().enumerate() {
            if datacenter_names[..i].contains(a) {
                return Err(ConfigError::Topology(format!("duplicate datacenter name {a:?}")));
            }
        }
        if shards.is_empty() {
            return Err(ConfigError::Topology("at least one shard required".into()));
        }
        for (s, p) in shards.iter().enumerate() {
            if p.replicas.is_empty() || p.replicas.len() % 2 == 0 {
                return Err(ConfigError::Topology(format!(
                    "shard {s} has {} replicas; need an odd 2F+1 count",
                    p.replicas.len()
                )));
            }
            for (i, dc) in p.replicas.iter().enumerate() {
                if dc.index() >= matrix.len() {
                    return Err(ConfigError::UnknownDatacenter(format!("{dc}")));
                }
                if p.replicas[..i].contains(dc) {
                    return Err(ConfigError::Topology(format!(
                        "shard {s} places two replicas in {dc}"
                    )));
                }
            }
            if !p.replicas.contains(&p.leader) {
                return Err(ConfigError::Topology(format!(
                    "shard {s} leader {} is not one of its replicas",
                    p.leader
                )));
            }
        }
        Ok(Topology { datacenter_names, matrix, shards })
    }

    pub fn dc_count(&self) -> usize {
        self.matrix.len()
    }

    pub fn dcs(&self) -> impl Iterator<Item = DcId> {
        (0..self.dc_count() as u8).map(DcId)
    }

    pub fn dc_by_name(&self, name: &str) -> Result<DcId, ConfigError> {
        self.datacenter_names
            .iter()
            .position(|n| n == name)
            .map(|i| DcId(i as u8))
            .ok_or_else(|| ConfigError::UnknownDatacenter(name.to_string()))
    }

    pub fn shard(&self, shard: ShardId) -> &ShardPlacement {
        &self.shards[shard.index()]
    }

    pub fn shard_ids(&self) -> impl Iterator<Item = ShardId> {
        (0..self.shards.len() as u32).map(ShardId)
    }

    /// Leaders whose replica sits in `dc`, restricted to `shards`.
    pub fn leaders_in_dc(&self, dc: DcId, shards: &[ShardId]) -> Vec<ShardId> {
        shards.iter().copied().filter(|s| self.shard(*s).leader == dc).collect()
    }
}

/// The five-datacenter deployment used throughout the latency studies:
/// Hangzhou, Beijing, San Francisco, Virginia, Frankfurt.
pub fn five_dc_names() -> Vec<String> {
    ["Hangzhou", "Beijing", "SanFrancisco", "Virginia", "Frankfurt"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// Measured RTTs (ms) between the five datacenters.
pub fn five_dc_rtt_ms() -> Vec<Vec<f64>> {
    vec![
        vec![0.2, 30.0, 140.0, 203.0, 231.0],
        vec![30.0, 0.2, 150.0, 215.0, 240.0],
        vec![140.0, 150.0, 0.2, 67.0, 151.0],
        vec![203.0, 215.0, 67.0, 0.3, 98.0],
        vec![231.0, 240.0, 151.0, 98.0, 0.25],
    ]
}
