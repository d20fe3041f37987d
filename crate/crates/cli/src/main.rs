//! `cornus` command line: latency benchmarks, exhaustive verification and a
//! live storage smoke test.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use cornus_core::bench::{run_bench, BenchConfig, RunReport};
use cornus_core::check::check;
use cornus_core::explore::{explore, storage_down_traces, ExploreConfig, ALL_PROTOCOLS};
use cornus_core::node::{Mutation, ProtocolKind, TerminationMode, Timeouts};
use cornus_core::sim::{FailureCase, FaultPlan};
use cornus_core::smoke::{run_smoke, SmokeCase};
use cornus_core::storage::{MemoryStore, RedisConfig, RedisStore, StorageLatencyModel};
use cornus_core::workload::WorkloadConfig;

#[derive(Parser)]
#[command(name = "cornus", version, about = "Cornus and two-phase commit over disaggregated log storage")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulated latency benchmark, or a storage smoke test.
    Bench(BenchArgs),
    /// Explore every crash point and check the correctness properties.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Protocol {
    Cornus,
    #[value(name = "2pc")]
    TwoPc,
}

#[derive(Clone, Copy, ValueEnum)]
enum Termination {
    Naive,
    Cooperative,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Backend {
    Memory,
    Redis,
}

#[derive(Clone, Copy, ValueEnum)]
enum YesNo {
    Yes,
    No,
}

#[derive(Clone, Copy, ValueEnum)]
enum Bug {
    /// Termination writes ABORT with a plain log instead of log_once.
    SkipLogonce,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum, default_value = "cornus")]
    protocol: Protocol,
    /// Termination protocol of 2PC.
    #[arg(long, value_enum)]
    termination: Option<Termination>,
    #[arg(long, value_enum, default_value = "memory")]
    storage: Backend,
    /// Redis endpoint, for `--storage redis`.
    #[arg(long, env = "CORNUS_REDIS_URL", default_value = "redis://127.0.0.1:6379/")]
    endpoint: String,
    /// Redis connect and I/O timeout.
    #[arg(long, env = "CORNUS_REDIS_TIMEOUT_MS", default_value_t = 2000)]
    connect_timeout_ms: u64,
    /// Run one commit and one terminator abort, comparing the backend with
    /// the in-memory store.
    #[arg(long)]
    smoke: bool,
    /// `fixed:W_us`, `fixed:W_us:R_us` or `paxos:d_us:acceptors`.
    #[arg(long, default_value = "fixed:1960")]
    storage_model: StorageLatencyModel,
    /// One-way network delay between nodes.
    #[arg(long, default_value_t = 250)]
    one_way_us: u64,
    /// Every protocol timeout, overriding the derived default.
    #[arg(long, env = "CORNUS_TIMEOUT_US")]
    timeout_us: Option<u64>,
    #[arg(long, default_value_t = 4)]
    nodes: u32,
    /// Zipfian skew of key accesses.
    #[arg(long, default_value_t = 0.0)]
    theta: f64,
    #[arg(long, default_value_t = 0.5)]
    write_prob: f64,
    /// Accesses per transaction.
    #[arg(long, default_value_t = 16)]
    txn_size: usize,
    /// Fraction of transactions generated read-only.
    #[arg(long, default_value_t = 0.0)]
    read_only_fraction: f64,
    /// Whether read-only transactions are known before the commit protocol.
    #[arg(long, value_enum, default_value = "yes")]
    ro_known: YesNo,
    #[arg(long, default_value_t = 4)]
    workers_per_node: u32,
    #[arg(long, default_value_t = 1000)]
    duration_virtual_ms: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fault plan, e.g. `n1@after-send:VOTE-RESP:1+recover=5000;storage@down:8000:20000`.
    #[arg(long, default_value = "")]
    faults: FaultPlan,
    /// Write per-class statistics as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 3)]
    nodes: u32,
    /// Deliberately break the Cornus termination protocol.
    #[arg(long, value_enum)]
    inject_bug: Option<Bug>,
    /// Only run the scenario where storage fails and never recovers.
    #[arg(long)]
    storage_down: bool,
    #[arg(long, default_value_t = 1_000_000)]
    max_traces: usize,
}

const CSV_HEADER: [&str; 13] = [
    "protocol",
    "nodes",
    "theta",
    "txn_class",
    "count",
    "mean_us",
    "p50_us",
    "p99_us",
    "exec_us",
    "prepare_us",
    "commit_us",
    "abort_us",
    "abort_rate",
];

fn protocol_kind(p: Protocol, t: Option<Termination>) -> Result<ProtocolKind> {
    Ok(match (p, t) {
        (Protocol::Cornus, None) => ProtocolKind::Cornus,
        (Protocol::Cornus, Some(_)) => bail!("--termination applies to 2pc only"),
        (Protocol::TwoPc, None | Some(Termination::Cooperative)) => ProtocolKind::TwoPc(TerminationMode::Cooperative),
        (Protocol::TwoPc, Some(Termination::Naive)) => ProtocolKind::TwoPc(TerminationMode::Naive),
    })
}

fn bench_config(a: &BenchArgs) -> Result<BenchConfig> {
    let mut cfg = BenchConfig::new(protocol_kind(a.protocol, a.termination)?, a.nodes);
    cfg.storage = a.storage_model;
    cfg.one_way_us = a.one_way_us;
    cfg.workload = WorkloadConfig {
        partitions: a.nodes,
        accesses_per_txn: a.txn_size,
        write_prob: a.write_prob,
        zipf_theta: a.theta,
        read_only_fraction: a.read_only_fraction,
        seed: a.seed,
        ..WorkloadConfig::default()
    };
    cfg.workload.validate().context("invalid workload")?;
    cfg.ro_known_in_advance = matches!(a.ro_known, YesNo::Yes);
    cfg.workers_per_node = a.workers_per_node;
    cfg.duration_us = a.duration_virtual_ms * 1000;
    cfg.seed = a.seed;
    cfg.faults = a.faults.clone();
    cfg.timeouts = a.timeout_us.map(|t| Timeouts { vote_req_us: t, votes_us: t, decision_us: t, termination_us: t });
    Ok(cfg)
}

fn write_csv(out: impl Write, r: &RunReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for c in &r.classes {
        w.write_record([
            r.protocol.to_string(),
            r.nodes.to_string(),
            r.theta.to_string(),
            c.class.to_string(),
            c.count.to_string(),
            format!("{:.1}", c.mean_us),
            c.p50_us.to_string(),
            c.p99_us.to_string(),
            format!("{:.1}", c.exec_us),
            format!("{:.1}", c.prepare_us),
            format!("{:.1}", c.commit_us),
            format!("{:.1}", c.abort_us),
            format!("{:.4}", c.abort_rate),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn print_report(r: &RunReport) {
    println!("protocol={} nodes={} theta={}", r.protocol, r.nodes, r.theta);
    println!(
        "{:<17} {:>7} {:>10} {:>8} {:>8} {:>9} {:>9} {:>9} {:>9} {:>7}",
        "class", "count", "mean_us", "p50_us", "p99_us", "exec", "prepare", "commit", "abort", "aborts"
    );
    for c in &r.classes {
        println!(
            "{:<17} {:>7} {:>10.1} {:>8} {:>8} {:>9.1} {:>9.1} {:>9.1} {:>9.1} {:>6.2}%",
            c.class.to_string(),
            c.count,
            c.mean_us,
            c.p50_us,
            c.p99_us,
            c.exec_us,
            c.prepare_us,
            c.commit_us,
            c.abort_us,
            100.0 * c.abort_rate
        );
    }
}

fn smoke(a: &BenchArgs) -> Result<bool> {
    let cases: Vec<SmokeCase> = match a.storage {
        Backend::Memory => run_smoke(&MemoryStore::new(), |_, _| Ok(()))?,
        Backend::Redis => {
            let cfg = RedisConfig { endpoint: a.endpoint.clone(), timeout: Duration::from_millis(a.connect_timeout_ms) };
            let store = RedisStore::connect(&cfg).with_context(|| format!("connecting to {}", a.endpoint))?;
            run_smoke(&store, |log, txn| store.clear(log, txn))?
        }
    };
    let mut ok = true;
    for c in &cases {
        println!("{} {c}", if c.ok() { "PASS" } else { "FAIL" });
        ok &= c.ok();
    }
    Ok(ok)
}

fn bench(a: BenchArgs) -> Result<ExitCode> {
    if a.smoke {
        return Ok(if smoke(&a)? { ExitCode::SUCCESS } else { ExitCode::FAILURE });
    }
    if a.storage == Backend::Redis {
        bail!("--storage redis is only supported together with --smoke");
    }
    let cfg = bench_config(&a)?;
    let (report, _) = run_bench(&cfg)?;
    print_report(&report);
    if let Some(path) = &a.out {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_csv(f, &report)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn verify_storage_down(ex: &ExploreConfig) -> Result<bool> {
    let mut ok = true;
    for (protocol, trace) in storage_down_traces(ex)? {
        let v = check(&trace);
        let status = match (v.passed(), v.is_blocked()) {
            (false, _) => "FAIL",
            (true, true) => "BLOCKED",
            (true, false) => "PASS",
        };
        println!("{protocol:<16} storage down, never recovers: {status}");
        for f in v.failures().chain(v.blocked()) {
            println!("  {f}");
        }
        ok &= v.passed();
    }
    Ok(ok)
}

fn verify(a: VerifyArgs) -> Result<ExitCode> {
    let mut ex = ExploreConfig::new(a.nodes);
    ex.max_traces = a.max_traces;
    ex.mutation = a.inject_bug.map(|Bug::SkipLogonce| Mutation::TerminationPlainLog);
    if a.storage_down {
        let ok = verify_storage_down(&ex)?;
        return Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE });
    }
    let started = Instant::now();
    let mut failing: BTreeMap<String, usize> = BTreeMap::new();
    let report = explore(&ex, |_, _, v| {
        let props: BTreeSet<String> = v.failures().map(|f| f.property.to_string()).collect();
        for p in props {
            *failing.entry(p).or_default() += 1;
        }
    })?;
    let elapsed = started.elapsed();

    let mut out = io::stdout().lock();
    for protocol in ALL_PROTOCOLS {
        writeln!(out, "{protocol}")?;
        writeln!(out, "  {:<60} {:>9} {:>7} {:>6} {:>7}", "crash point", "scenarios", "traces", "fail", "blocked")?;
        let cases = std::iter::once(None).chain(FailureCase::ALL.into_iter().map(Some));
        for case in cases {
            let c = report.case(protocol, case);
            let label = case.map_or("no crash", FailureCase::label);
            writeln!(out, "  {label:<60} {:>9} {:>7} {:>6} {:>7}", c.scenarios, c.traces, c.failed, c.blocked)?;
        }
        if let Some(s) = report.summary(protocol) {
            writeln!(
                out,
                "  total: {} traces, {} passed, {} failed, {} blocked ({} with storage alive)",
                s.traces, s.passed, s.failed, s.blocked, s.blocked_storage_alive
            )?;
        }
    }
    writeln!(out, "explored {} traces in {:.1}s", report.traces, elapsed.as_secs_f64())?;
    if let Some((scenario, schedule, verdict)) = &report.first_failure {
        writeln!(out, "first failure: {scenario} schedule={schedule:?}\n{verdict}")?;
    }
    for (property, traces) in &failing {
        writeln!(out, "{property} FAIL in {traces} traces")?;
    }
    let ok = report.requirements_hold();
    writeln!(out, "{}", if ok { "all requirements hold" } else { "requirements violated" })?;
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Bench(a) => bench(a),
        Command::Verify(a) => verify(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
