//! Closed-form latency and concurrency-control-period calculator.
//!
//! The calculator mirrors the simulator's message paths exactly, so a
//! contention-free run with zero processing delay reproduces these values to
//! the microsecond. With `L[i][j]` the RTT matrix (diagonal = intra-DC RTT):
//!
//! - Decentralized-commit CCP at the leader in `b` for a client in `a`:
//!   `max over participants i of (L[a][i] + L[i][b] - L[a][b]) / 2` — the
//!   Prepare reaches `b` after `L[a][b]/2` and the last vote arrives through
//!   a co-located replica at `(L[a][i] + L[i][b]) / 2`.
//! - Decentralized commit latency: per shard the client needs the vote and
//!   F+1 replication replies over three-hop routes
//!   client -> leader -> replica -> correspondent (1.5 RTTs in general); a
//!   replica co-located with the correspondent collapses the last hop and
//!   yields the 1-RTT case `max_i L[a][i]`.
//! - Layered commit latency: `max_i (L[a][i] + L_i-majority)` plus the vote
//!   hop to the coordinator when it is not co-located with the client, where
//!   `L_i-majority` is the RTT to the F-th closest follower.

use crate::error::AnalyticError;
use crate::time::SimTime;
use crate::topology::{DcId, ShardId, Topology};
use crate::types::Protocol;

pub struct Analytic<'a> {
    topology: &'a Topology,
}

impl<'a> Analytic<'a> {
    pub fn new(topology: &'a Topology) -> Analytic<'a> {
        Analytic { topology }
    }

    fn l(&self, a: DcId, b: DcId) -> SimTime {
        self.topology.matrix.rtt(a, b)
    }

    fn half(&self, a: DcId, b: DcId) -> SimTime {
        self.topology.matrix.one_way(a, b)
    }

    /// Time for the leader of `shard` to hear F+1 durable copies: its own
    /// append is instant, so the F-th closest follower RTT bounds the quorum.
    pub fn majority_wait(&self, shard: ShardId) -> SimTime {
        let p = self.topology.shard(shard);
        let f = p.f();
        if f == 0 {
            return SimTime::ZERO;
        }
        let mut follower_rtts: Vec<SimTime> =
            p.replicas.iter().filter(|&&dc| dc != p.leader).map(|&dc| self.l(p.leader, dc)).collect();
        follower_rtts.sort();
        follower_rtts[f - 1]
    }

    /// Concurrency-control period at the shard leader in `b` under
    /// decentralized commit, transaction initiated in `a`.
    pub fn ccp_d2pc(
        &self,
        a: DcId,
        b: DcId,
        participants: &[DcId],
    ) -> Result<SimTime, AnalyticError> {
        if participants.is_empty() {
            return Err(AnalyticError::EmptyParticipants);
        }
        let base = self.half(a, b);
        let mut worst = SimTime::ZERO;
        for &i in participants {
            // (L[a][i] + L[i][b] - L[a][b]) / 2, kept in unsigned arithmetic.
            let arrive = self.half(a, i) + self.half(i, b);
            let term = if arrive > base { arrive - base } else { SimTime::ZERO };
            if term > worst {
                worst = term;
            }
        }
        Ok(worst)
    }

    /// Client-observed commit latency for a contention-free transaction
    /// initiated in `a` over the given participant shards.
    pub fn commit_latency(
        &self,
        protocol: Protocol,
        a: DcId,
        participants: &[ShardId],
    ) -> Result<SimTime, AnalyticError> {
        if participants.is_empty() {
            return Err(AnalyticError::EmptyParticipants);
        }
        match protocol {
            Protocol::D2pc => Ok(self.d2pc_latency(a, participants)),
            Protocol::Layered => Ok(self.layered_latency(a, participants)),
        }
    }

    fn d2pc_latency(&self, a: DcId, participants: &[ShardId]) -> SimTime {
        let mut decision = SimTime::ZERO;
        for &shard in participants {
            let p = self.topology.shard(shard);
            let leader = p.leader;
            let t_prepare = self.half(a, leader);
            // Reply of replica j at the correspondent: leader self-append
            // message, then the notice is local and the co-coordinator
            // forwards (no hop when j is the correspondent's datacenter).
            let mut replies: Vec<(SimTime, bool)> = p
                .replicas
                .iter()
                .map(|&j| {
                    let hop_in = self.half(leader, j); // diagonal for j == leader
                    let hop_out = if j == a { SimTime::ZERO } else { self.half(j, a) };
                    (t_prepare + hop_in + hop_out, j == leader)
                })
                .collect();
            let slow = t_prepare + self.majority_wait(shard) + self.half(leader, a);
            let mut vote = slow;
            for &(r, _) in &replies {
                vote = vote.min(r);
            }
            if !p.has_replica_in(a) {
                // Direct leader vote to the correspondent's co-coordinator.
                vote = vote.min(t_prepare + self.half(leader, a));
            }
            // Replication proven: F+1 distinct copies; any reply also proves
            // the leader's own durable append.
            replies.sort();
            let quorum = p.quorum();
            let mut fast = replies.last().expect("at least one replica").0;
            let mut leader_seen = false;
            for (k, &(r, is_leader)) in replies.iter().enumerate() {
                leader_seen |= is_leader;
                let effective = (k + 1) + usize::from(!leader_seen);
                if effective >= quorum {
                    fast = r;
                    break;
                }
            }
            let repl = fast.min(slow);
            let done = vote.max(repl);
            decision = decision.max(done);
        }
        decision
    }

    fn layered_latency(&self, a: DcId, participants: &[ShardId]) -> SimTime {
        let coord_shard = *participants.iter().min().expect("non-empty");
        let c = self.topology.shard(coord_shard).leader;
        let mut decision = SimTime::ZERO;
        for &shard in participants {
            let leader = self.topology.shard(shard).leader;
            let vote_hop =
                if shard == coord_shard { SimTime::ZERO } else { self.half(leader, c) };
            let t = self.half(a, leader) + self.majority_wait(shard) + vote_hop;
            decision = decision.max(t);
        }
        let notify = if c == a { SimTime::ZERO } else { self.half(c, a) };
        decision + notify
    }
}
