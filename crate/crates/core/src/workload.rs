//! Workload generation: Zipf key selection and the Retwis / YCSB+T
//! transaction mixes.
//!
//! Every client owns a private RNG stream derived from `(seed, client_id)`,
//! so a fixed seed reproduces the exact same transaction stream regardless
//! of scheduling.

use crate::error::ConfigError;
use crate::types::{Key, TxnId, Value};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

/// Zipfian sampler over `[0, n)` after Gray et al.: closed-form inverse
/// sampling from precomputed zeta constants, no rejection loop. `theta = 0`
/// degenerates to the uniform distribution.
#[derive(Debug, Clone)]
pub struct ZipfGenerator {
    n: u64,
    theta: f64,
    alpha: f64,
    zetan: f64,
    eta: f64,
}

impl ZipfGenerator {
    pub fn new(n: u64, theta: f64) -> Result<ZipfGenerator, ConfigError> {
        if n == 0 {
            return Err(ConfigError::Workload("zipf key space must be non-empty".into()));
        }
        if !(0.0..1.0).contains(&theta) {
            return Err(ConfigError::Workload(format!(
                "zipf coefficient {theta} outside [0, 1)"
            )));
        }
        if theta == 0.0 {
            return Ok(ZipfGenerator { n, theta, alpha: 0.0, zetan: 0.0, eta: 0.0 });
        }
        let zetan = Self::zeta(n, theta);
        let zeta2 = Self::zeta(2, theta);
        let alpha = 1.0 / (1.0 - theta);
        let eta = (1.0 - (2.0 / n as f64).powf(1.0 - theta)) / (1.0 - zeta2 / zetan);
        Ok(ZipfGenerator { n, theta, alpha, zetan, eta })
    }

    fn zeta(n: u64, theta: f64) -> f64 {
        (1..=n).map(|i| 1.0 / (i as f64).powf(theta)).sum()
    }

    /// Probability mass of rank `i` (0-based); the analytic reference the
    /// sampler is tested against.
    pub fn mass(&self, i: u64) -> f64 {
        if self.theta == 0.0 {
            1.0 / self.n as f64
        } else {
            1.0 / ((i + 1) as f64).powf(self.theta) / self.zetan
        }
    }

    /// Draws a rank in `[0, n)`; rank 0 is the hottest.
    pub fn next(&self, rng: &mut impl Rng) -> u64 {
        if self.theta == 0.0 {
            return rng.gen_range(0..self.n);
        }
        let u: f64 = rng.gen();
        let uz = u * self.zetan;
        if uz < 1.0 {
            return 0;
        }
        if uz < 1.0 + 0.5f64.powf(self.theta) {
            return 1;
        }
        let rank = (self.n as f64 * (self.eta * u - self.eta + 1.0).powf(self.alpha)) as u64;
        rank.min(self.n - 1)
    }
}

/// Bijective 64-bit mix (splitmix64 finalizer); spreads hot Zipf ranks over
/// the key space so neighboring ranks land on different shards.
pub fn scramble(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn client_rng(seed: u64, client_id: u32) -> StdRng {
    StdRng::seed_from_u64(scramble(seed ^ ((client_id as u64) << 32 | 0xc11e)))
}

/// One generated transaction: the keys to read and the writes to buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxnSpec {
    pub reads: Vec<Key>,
    pub writes: Vec<(Key, Value)>,
}

impl TxnSpec {
    /// Deterministic write payload, recognizable in dumps.
    pub fn value_for(tid: TxnId, key: Key) -> Value {
        scramble(((tid.client as u64) << 40) ^ (tid.counter << 8) ^ key)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadKind {
    Retwis,
    Ycsbt,
    /// Single-transaction probe used by the latency studies: one write per
    /// participant shard, no reads, no contention.
    Probe,
}

/// Retwis transaction profile: (gets, puts, weight%).
const RETWIS_PROFILE: [(RetwisTxn, u32, u32, u32); 4] = [
    (RetwisTxn::AddUser, 1, 3, 5),
    (RetwisTxn::Follow, 2, 2, 15),
    (RetwisTxn::PostTweet, 3, 5, 30),
    (RetwisTxn::LoadTimeline, 0, 0, 50), // gets drawn as rand(1,10) per txn
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RetwisTxn {
    AddUser,
    Follow,
    PostTweet,
    LoadTimeline,
}

/// Per-client workload state.
#[derive(Debug, Clone)]
pub struct Generator {
    kind: WorkloadKind,
    zipf: ZipfGenerator,
    /// Keys per shard; the global key space is `keys_per_shard * shards`.
    keys_per_shard: u64,
    shards: u64,
    /// Probe mode: the participant shards to write.
    probe_shards: Vec<u64>,
    /// Override for the long-read regression workload: fraction (percent) of
    /// transactions that are large read-only scans.
    pub long_read_percent: u32,
    pub long_read_keys: usize,
}

impl Generator {
    pub fn new(
        kind: WorkloadKind,
        zipf_theta: f64,
        keys_per_shard: u64,
        shards: u64,
        probe_shards: Vec<u64>,
    ) -> Result<Generator, ConfigError> {
        let space = keys_per_shard.saturating_mul(shards);
        Ok(Generator {
            kind,
            zipf: ZipfGenerator::new(space.max(1), zipf_theta)?,
            keys_per_shard,
            shards,
            probe_shards,
            long_read_percent: 0,
            long_read_keys: 50,
        })
    }

    /// Maps a Zipf rank to a key spread across shards.
    fn key_at(&self, rank: u64) -> Key {
        scramble(rank) % (self.keys_per_shard * self.shards)
    }

    fn distinct_keys(&self, rng: &mut StdRng, count: usize) -> Vec<Key> {
        // Drawn without replacement: duplicates are redrawn.
        let mut keys: Vec<Key> = Vec::with_capacity(count);
        while keys.len() < count {
            let k = self.key_at(self.zipf.next(rng));
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys
    }

    pub fn next_txn(&self, rng: &mut StdRng, tid: TxnId) -> TxnSpec {
        if self.long_read_percent > 0 && rng.gen_range(0..100) < self.long_read_percent {
            return TxnSpec { reads: self.distinct_keys(rng, self.long_read_keys), writes: vec![] };
        }
        match self.kind {
            WorkloadKind::Retwis => self.retwis(rng, tid),
            WorkloadKind::Ycsbt => self.ycsbt(rng, tid),
            WorkloadKind::Probe => self.probe(tid),
        }
    }

    fn retwis(&self, rng: &mut StdRng, tid: TxnId) -> TxnSpec {
        let roll = rng.gen_range(0..100u32);
        let mut acc = 0;
        let mut pick = RetwisTxn::LoadTimeline;
        for (txn, _, _, weight) in RETWIS_PROFILE {
            acc += weight;
            if roll < acc {
                pick = txn;
                break;
            }
        }
        let (gets, puts) = match pick {
            RetwisTxn::AddUser => (1, 3),
            RetwisTxn::Follow => (2, 2),
            RetwisTxn::PostTweet => (3, 5),
            RetwisTxn::LoadTimeline => (rng.gen_range(1..=10), 0),
        };
        let keys = self.distinct_keys(rng, gets + puts);
        let reads = keys[..gets].to_vec();
        let writes = keys[gets..].iter().map(|&k| (k, TxnSpec::value_for(tid, k))).collect();
        TxnSpec { reads, writes }
    }

    /// YCSB+T workload A: 50% read / 50% update, one operation per shard so
    /// every transaction spans all shards.
    fn ycsbt(&self, rng: &mut StdRng, tid: TxnId) -> TxnSpec {
        let mut reads = Vec::new();
        let mut writes = Vec::new();
        for shard in 0..self.shards {
            let local = scramble(self.zipf.next(rng)) % self.keys_per_shard;
            let key = local * self.shards + shard;
            if rng.gen_bool(0.5) {
                reads.push(key);
            } else {
                writes.push((key, TxnSpec::value_for(tid, key)));
            }
        }
        TxnSpec { reads, writes }
    }

    fn probe(&self, tid: TxnId) -> TxnSpec {
        let writes = self
            .probe_shards
            .iter()
            .map(|&shard| {
                let key = tid.counter * self.shards + shard;
                (key, TxnSpec::value_for(tid, key))
            })
            .collect();
        TxnSpec { reads: vec![], writes }
    }
}
