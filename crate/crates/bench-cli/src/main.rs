//! Experiment runner CLI: execute simulations from a config file, query the
//! analytic latency calculator, check run traces against the history
//! oracles, and sweep config parameters in parallel.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use d2pc_core::analytic::Analytic;
use d2pc_core::cluster::run_experiment;
use d2pc_core::config::ExperimentConfig;
use d2pc_core::metrics::records_to_jsonl;
use d2pc_core::oracle::{check_dependency_order, check_history};
use d2pc_core::topology::ShardId;
use d2pc_core::trace::Trace;
use d2pc_core::types::Protocol;
use rayon::prelude::*;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "d2pc-bench", about = "Commit-protocol simulation bench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config and emit metrics, a summary, and optionally
    /// the full trace.
    Run(RunArgs),
    /// Evaluate the analytic latency/CCP model over a config's topology.
    Calc(CalcArgs),
    /// Check a trace file against the serializability, atomicity, and
    /// recoverability oracles.
    Check(CheckArgs),
    /// Run the cartesian product of parameter overrides, one simulation per
    /// combination, in parallel.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    config: PathBuf,
    /// Output directory for metrics.jsonl and summary.tsv.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Also write the full event trace (trace.jsonl); large.
    #[arg(long)]
    trace: bool,
    /// Run the history oracles on the trace after the run.
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct CalcArgs {
    /// Experiment config providing the topology.
    config: PathBuf,
    /// Protocol to evaluate.
    #[arg(long, value_parser = parse_protocol)]
    protocol: Protocol,
    /// Client datacenter name.
    #[arg(long)]
    from: String,
    /// Comma-separated participant shard indexes (defaults to all shards).
    #[arg(long)]
    participants: Option<String>,
    /// Also print the concurrency-control-period length at this datacenter's
    /// leader (decentralized protocol only).
    #[arg(long)]
    ccp_at: Option<String>,
}

#[derive(Args)]
struct CheckArgs {
    /// Trace file (line-delimited JSON), as written by `run --trace`.
    trace: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Base experiment config.
    config: PathBuf,
    /// Override as key=v1,v2,... (repeatable). Keys: seed, protocol, cc,
    /// read_opt, zipf_theta, clients, txn_limit, coordinator_groups.
    #[arg(long = "param")]
    params: Vec<String>,
    /// Directory for per-combination metrics files; stdout gets the table.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn parse_protocol(s: &str) -> Result<Protocol, String> {
    match s {
        "d2pc" => Ok(Protocol::D2pc),
        "layered" => Ok(Protocol::Layered),
        other => Err(format!("unknown protocol {other:?} (want d2pc or layered)")),
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    Ok(ExperimentConfig::from_toml(&text)?)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => cmd_run(args),
        Command::Calc(args) => cmd_calc(args),
        Command::Check(args) => cmd_check(args),
        Command::Sweep(args) => cmd_sweep(args),
    }
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    if args.trace {
        cfg.record_messages = true;
    }
    let out = run_experiment(&cfg)?;
    fs::create_dir_all(&args.out_dir)?;
    fs::write(args.out_dir.join("metrics.jsonl"), records_to_jsonl(&out.records))?;
    fs::write(args.out_dir.join("summary.tsv"), out.summary.to_table())?;
    if args.trace {
        fs::write(args.out_dir.join("trace.jsonl"), out.trace.to_jsonl())?;
    }
    print!("{}", out.summary.to_table());
    if args.check {
        let report = check_history(&out.trace);
        println!(
            "serializable\t{}\natomic\t{}\nrecoverable\t{}",
            report.serializable, report.atomic, report.recoverable
        );
        if !report.all_hold() {
            bail!("history oracle violations: {:?}", report.violations);
        }
    }
    Ok(())
}

fn cmd_calc(args: CalcArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let topology = cfg.build_topology()?;
    let analytic = Analytic::new(&topology);
    let from = topology.dc_by_name(&args.from)?;
    let participants: Vec<ShardId> = match &args.participants {
        Some(list) => list
            .split(',')
            .map(|s| -> Result<ShardId> {
                let idx: u32 = s.trim().parse().context("shard index")?;
                if idx as usize >= topology.shards.len() {
                    bail!("shard {idx} out of range");
                }
                Ok(ShardId(idx))
            })
            .collect::<Result<_>>()?,
        None => topology.shard_ids().collect(),
    };
    let latency = analytic.commit_latency(args.protocol, from, &participants)?;
    println!("commit_latency_ms\t{:.3}", latency.as_ms());
    if let Some(at) = args.ccp_at {
        if args.protocol != Protocol::D2pc {
            bail!("--ccp-at applies to the decentralized protocol only");
        }
        let b = topology.dc_by_name(&at)?;
        let leader_dcs: Vec<_> =
            participants.iter().map(|&s| topology.shard(s).leader).collect();
        let ccp = analytic.ccp_d2pc(from, b, &leader_dcs)?;
        println!("ccp_ms[{at}]\t{:.3}", ccp.as_ms());
    }
    Ok(())
}

fn cmd_check(args: CheckArgs) -> Result<()> {
    let text = fs::read_to_string(&args.trace)
        .with_context(|| format!("reading trace {}", args.trace.display()))?;
    let trace = Trace::from_jsonl(&text)?;
    let report = check_history(&trace);
    println!(
        "serializable\t{}\natomic\t{}\nrecoverable\t{}\ncommitted\t{}\naborted\t{}",
        report.serializable, report.atomic, report.recoverable, report.committed, report.aborted
    );
    for v in &report.violations {
        println!("violation\t{v}");
    }
    if let Err(errs) = check_dependency_order(&trace) {
        for e in &errs {
            println!("violation\t{e}");
        }
        bail!("dependency order violated");
    }
    if !report.all_hold() {
        bail!("history oracle violations");
    }
    Ok(())
}

/// One parameter override applied to a config clone.
fn apply_param(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "seed" => cfg.seed = value.parse()?,
        "protocol" => cfg.protocol = parse_protocol(value).map_err(anyhow::Error::msg)?,
        "cc" => {
            cfg.cc = match value {
                "occ" => d2pc_core::types::CcMode::Occ,
                "2pl" => d2pc_core::types::CcMode::TwoPl,
                other => bail!("unknown cc {other:?}"),
            }
        }
        "read_opt" => cfg.read_opt = value.parse()?,
        "zipf_theta" => cfg.workload.zipf_theta = value.parse()?,
        "clients" => {
            cfg.workload.clients = value.parse()?;
            cfg.workload.clients_per_dc = None;
        }
        "txn_limit" => cfg.workload.txn_limit = Some(value.parse()?),
        "coordinator_groups" => cfg.coordinator_groups = value.parse()?,
        other => bail!("unsupported sweep parameter {other:?}"),
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let base = load_config(&args.config)?;
    let mut axes: Vec<(String, Vec<String>)> = Vec::new();
    for p in &args.params {
        let (key, values) = p
            .split_once('=')
            .with_context(|| format!("--param {p:?} is not key=v1,v2,..."))?;
        axes.push((key.to_string(), values.split(',').map(str::to_string).collect()));
    }
    if axes.is_empty() {
        bail!("sweep needs at least one --param");
    }
    // Cartesian product of the axes.
    let mut combos: Vec<Vec<(String, String)>> = vec![vec![]];
    for (key, values) in &axes {
        let mut next = Vec::new();
        for combo in &combos {
            for v in values {
                let mut c = combo.clone();
                c.push((key.clone(), v.clone()));
                next.push(c);
            }
        }
        combos = next;
    }
    let configs: Vec<(String, ExperimentConfig)> = combos
        .iter()
        .map(|combo| -> Result<_> {
            let mut cfg = base.clone();
            for (k, v) in combo {
                apply_param(&mut cfg, k, v)?;
            }
            cfg.validate()?;
            let label = combo
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(",");
            Ok((label, cfg))
        })
        .collect::<Result<_>>()?;

    // Simulation instances share nothing, so combinations run in parallel.
    let mut results: Vec<(String, d2pc_core::cluster::RunOutput)> = configs
        .into_par_iter()
        .map(|(label, cfg)| {
            let out = run_experiment(&cfg).expect("sweep run");
            (label, out)
        })
        .collect();
    results.sort_by(|a, b| a.0.cmp(&b.0));

    println!("combo\tcommitted\tfailed\tthroughput_per_sec\tlatency_mean_ms\tlatency_p95_ms\tmean_ccp_ms\tabort_rate");
    for (label, out) in &results {
        let s = &out.summary;
        println!(
            "{label}\t{}\t{}\t{:.2}\t{:.3}\t{:.3}\t{:.3}\t{:.4}",
            s.committed,
            s.failed,
            s.throughput_per_sec,
            s.latency_mean_ms,
            s.latency_p95_ms,
            s.mean_ccp_ms,
            s.abort_rate
        );
    }
    if let Some(dir) = &args.out_dir {
        fs::create_dir_all(dir)?;
        for (label, out) in &results {
            let safe: String = label
                .chars()
                .map(|c| if c.is_alphanumeric() || c == '=' || c == '.' { c } else { '_' })
                .collect();
            fs::write(dir.join(format!("{safe}.jsonl")), records_to_jsonl(&out.records))?;
        }
    }
    Ok(())
}
