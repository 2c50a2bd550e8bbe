//! Per-transaction metrics and run summaries, derived from the trace.

use crate::time::SimTime;
use crate::topology::{DcId, ShardId, Topology};
use crate::trace::{Trace, TraceEvent};
use crate::types::{AbortReason, Decision, TxnId};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// One commit attempt as the client observed it, joined with the
/// concurrency-control windows its participant leaders recorded.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub tid: TxnId,
    pub client: u32,
    pub outcome: Decision,
    pub commit_latency_ms: f64,
    /// Per participant shard that entered Prepared: concurrency-control
    /// period length at its leader.
    pub ccp_ms: Vec<(ShardId, f64)>,
    pub aborted_reason: Option<AbortReason>,
    pub retries: u32,
    pub participants: Vec<ShardId>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryReport {
    /// Transaction chains that reached a terminal state.
    pub issued: u64,
    pub committed: u64,
    /// Terminal aborts (no retry budget configured).
    pub aborted: u64,
    /// Chains that exhausted a non-zero retry budget.
    pub failed: u64,
    pub attempts: u64,
    pub aborted_attempts: u64,
    pub abort_rate: f64,
    pub starved_fraction: f64,
    /// Committed transactions per simulated second.
    pub throughput_per_sec: f64,
    pub latency_mean_ms: f64,
    pub latency_p50_ms: f64,
    pub latency_p95_ms: f64,
    pub mean_ccp_ms_per_dc: Vec<(String, f64)>,
    pub mean_ccp_ms: f64,
    pub max_retries: u32,
    pub sim_duration_ms: f64,
}

impl SummaryReport {
    /// Tab-separated key/value table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let mut row = |k: &str, v: String| {
            s.push_str(k);
            s.push('\t');
            s.push_str(&v);
            s.push('\n');
        };
        row("issued", self.issued.to_string());
        row("committed", self.committed.to_string());
        row("aborted", self.aborted.to_string());
        row("failed", self.failed.to_string());
        row("attempts", self.attempts.to_string());
        row("abort_rate", format!("{:.4}", self.abort_rate));
        row("starved_fraction", format!("{:.4}", self.starved_fraction));
        row("throughput_per_sec", format!("{:.2}", self.throughput_per_sec));
        row("latency_mean_ms", format!("{:.3}", self.latency_mean_ms));
        row("latency_p50_ms", format!("{:.3}", self.latency_p50_ms));
        row("latency_p95_ms", format!("{:.3}", self.latency_p95_ms));
        row("mean_ccp_ms", format!("{:.3}", self.mean_ccp_ms));
        for (dc, v) in &self.mean_ccp_ms_per_dc {
            row(&format!("mean_ccp_ms[{dc}]"), format!("{v:.3}"));
        }
        row("max_retries", self.max_retries.to_string());
        row("sim_duration_ms", format!("{:.3}", self.sim_duration_ms));
        s
    }
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((sorted.len() as f64 - 1.0) * p).round() as usize;
    sorted[idx]
}

/// Joins client outcomes with leader-side CCP windows.
pub fn records_from_trace(trace: &Trace, retry_limit: u32) -> Vec<MetricsRecord> {
    let mut ccp: BTreeMap<TxnId, Vec<(ShardId, f64)>> = BTreeMap::new();
    for ev in &trace.events {
        if let TraceEvent::CcpClosed { shard, tid, start, end, .. } = ev {
            ccp.entry(*tid).or_default().push((*shard, (*end - *start).as_ms()));
        }
    }
    let mut out = Vec::new();
    for ev in &trace.events {
        if let TraceEvent::TxnOutcome {
            tid,
            client,
            decision,
            latency,
            retries,
            participants,
            abort_reason,
            ..
        } = ev
        {
            let _ = retry_limit;
            out.push(MetricsRecord {
                tid: *tid,
                client: *client,
                outcome: *decision,
                commit_latency_ms: latency.as_ms(),
                ccp_ms: ccp.remove(tid).unwrap_or_default(),
                aborted_reason: *abort_reason,
                retries: *retries,
                participants: participants.clone(),
            });
        }
    }
    out
}

pub fn summarize(
    records: &[MetricsRecord],
    trace: &Trace,
    topology: &Topology,
    retry_limit: u32,
    sim_end: SimTime,
) -> SummaryReport {
    let attempts = records.len() as u64;
    let committed = records.iter().filter(|r| r.outcome == Decision::Commit).count() as u64;
    let aborted_attempts = attempts - committed;
    let failed = trace
        .events
        .iter()
        .filter(|e| matches!(e, TraceEvent::TxnFailed { .. }))
        .count() as u64;
    // Terminal aborts: the chain had no retry budget at all.
    let aborted = if retry_limit == 0 { aborted_attempts } else { 0 };
    let issued = committed + aborted + failed;

    let mut latencies: Vec<f64> = records
        .iter()
        .filter(|r| r.outcome == Decision::Commit)
        .map(|r| r.commit_latency_ms)
        .collect();
    latencies.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let latency_mean =
        if latencies.is_empty() { 0.0 } else { latencies.iter().sum::<f64>() / latencies.len() as f64 };

    let mut ccp_by_dc: BTreeMap<DcId, (f64, u64)> = BTreeMap::new();
    let mut ccp_all = (0.0, 0u64);
    for ev in &trace.events {
        if let TraceEvent::CcpClosed { dc, start, end, .. } = ev {
            let v = (*end - *start).as_ms();
            let e = ccp_by_dc.entry(*dc).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
            ccp_all.0 += v;
            ccp_all.1 += 1;
        }
    }
    let mean_ccp_ms_per_dc = ccp_by_dc
        .into_iter()
        .map(|(dc, (sum, n))| {
            (topology.datacenter_names[dc.index()].clone(), sum / n.max(1) as f64)
        })
        .collect();

    let sim_secs = sim_end.as_ms() / 1000.0;
    SummaryReport {
        issued,
        committed,
        aborted,
        failed,
        attempts,
        aborted_attempts,
        abort_rate: if attempts == 0 { 0.0 } else { aborted_attempts as f64 / attempts as f64 },
        starved_fraction: if issued == 0 { 0.0 } else { failed as f64 / issued as f64 },
        throughput_per_sec: if sim_secs > 0.0 { committed as f64 / sim_secs } else { 0.0 },
        latency_mean_ms: latency_mean,
        latency_p50_ms: percentile(&latencies, 0.5),
        latency_p95_ms: percentile(&latencies, 0.95),
        mean_ccp_ms_per_dc,
        mean_ccp_ms: if ccp_all.1 == 0 { 0.0 } else { ccp_all.0 / ccp_all.1 as f64 },
        max_retries: records.iter().map(|r| r.retries).max().unwrap_or(0),
        sim_duration_ms: sim_end.as_ms(),
    }
}

/// Line-delimited JSON records.
pub fn records_to_jsonl(records: &[MetricsRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("record serializes"));
        s.push('\n');
    }
    s
}
