//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if
//! any criterion fails. Lines bypass the test harness capture so they show
//! up in plain `cargo test` output.

use std::io::Write;
use std::process::Command;
use std::time::{Duration, Instant};

use cornus_core::bench::{run_bench, BenchConfig, TxnClass};
use cornus_core::check::{critical_path_writes, linearize, Property};
use cornus_core::explore::{explore, ExploreConfig};
use cornus_core::node::{Mutation, ProtocolKind, TerminationMode};
use cornus_core::sim::{run, FailureCase, ScriptedTxn, SimConfig, Workload};
use cornus_core::smoke::run_smoke;
use cornus_core::storage::{RedisConfig, RedisStore, StorageLatencyModel};
use cornus_core::stress::run_schedule;
use cornus_core::trace::TraceKind;
use cornus_core::types::{Access, Decision, LogId, LogKind, LogState, NodeId, RecordType, SlotField, Transaction, TxnId};

const CORNUS: ProtocolKind = ProtocolKind::Cornus;
const TWOPC: ProtocolKind = ProtocolKind::TwoPc(TerminationMode::Cooperative);
const TWOPC_NAIVE: ProtocolKind = ProtocolKind::TwoPc(TerminationMode::Naive);

/// Measured managed-Redis constants: one-way delay and conditional write.
const D_US: u64 = 250;
const W_US: u64 = 1960;
/// Accepted band for the end-to-end distributed read-write speedup.
const SPEEDUP_BAND: (f64, f64) = (1.3, 2.0);
const VERIFY_LIMIT: Duration = Duration::from_secs(60);
const LIN_SCHEDULES: u64 = 10_000;

fn line(id: u32, name: &str, ok: bool, detail: &str) {
    let status = if ok { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "{status} [{id}] {name}: {detail}").unwrap();
}

fn skip(id: u32, name: &str, detail: &str) {
    writeln!(std::io::stdout().lock(), "SKIP [{id}] {name}: {detail}").unwrap();
}

/// Coordinator n0 holds no data; n1..n{parts} each write one key.
fn txn(parts: u32, seq: u64) -> Transaction {
    let accesses = (1..=parts).map(|p| (NodeId(p), vec![Access::write(u64::from(p))])).collect();
    Transaction::new(TxnId::new(NodeId(0), seq), accesses).unwrap()
}

fn single_latency(protocol: ProtocolKind, d: u64, storage: StorageLatencyModel, execute: bool) -> u64 {
    let cfg = SimConfig::new(protocol, 3).with_timing(d, storage);
    let mut s = ScriptedTxn::new(txn(2, 1));
    if execute {
        s = s.with_execution();
    }
    let r = run(cfg, Workload::Scripted(vec![s])).unwrap();
    let o = r.txns.first().unwrap();
    assert_eq!(o.decision(), Some(Decision::Commit));
    o.latency_us().unwrap()
}

fn rtt_accounting() -> bool {
    let mut ok = true;
    let mut detail = Vec::new();
    for d in [100, D_US, 1000] {
        let paxos = StorageLatencyModel::PaxosLeader { one_way_us: d, acceptors: 2 };
        let c = single_latency(CORNUS, d, paxos, false);
        let t = single_latency(TWOPC, d, paxos, false);
        // Round trip to the participant plus one leader-replicated write,
        // then one more such write for the 2PC decision.
        let (want_c, want_t) = (2 * d + 4 * d, 2 * d + 4 * d + 4 * d);
        ok &= c == want_c && t == want_t;
        detail.push(format!("d={d}: cornus={c} (want {want_c}) 2pc={t} (want {want_t})"));
    }
    line(1, "round trips under a leader-based replicated store", ok, &detail.join("; "));
    ok
}

fn write_elimination() -> bool {
    let mut ok = true;
    let mut detail = Vec::new();
    for (d, w) in [(D_US, W_US), (100, 500), (1000, 50), (0, 1000)] {
        let fixed = StorageLatencyModel::fixed(w);
        let c = single_latency(CORNUS, d, fixed, true);
        let t = single_latency(TWOPC, d, fixed, true);
        let (want_c, want_t) = (4 * d + w, 4 * d + 2 * w);
        ok &= c == want_c && t == want_t && t - c == w;
        detail.push(format!("d={d},W={w}: cornus={c} 2pc={t} diff={}", t.saturating_sub(c)));
    }
    line(2, "one storage write removed from the critical path", ok, &detail.join("; "));
    ok
}

fn speedup() -> bool {
    let mean = |protocol| {
        let mut cfg = BenchConfig::new(protocol, 4);
        cfg.one_way_us = D_US;
        cfg.storage = StorageLatencyModel::fixed(W_US);
        cfg.seed = 7;
        let (r, _) = run_bench(&cfg).unwrap();
        r.class(TxnClass::DistributedRw).mean_us
    };
    let (c, t) = (mean(CORNUS), mean(TWOPC));
    let s = t / c;
    let ok = (SPEEDUP_BAND.0..=SPEEDUP_BAND.1).contains(&s);
    let detail = format!("distributed rw mean cornus={c:.1}us 2pc={t:.1}us speedup={s:.3} band={SPEEDUP_BAND:?}");
    line(3, "end-to-end speedup with measured Redis constants", ok, &detail);
    ok
}

fn failure_matrix() -> bool {
    let started = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_cornus")).args(["verify", "--nodes", "3"]).output().unwrap();
    let elapsed = started.elapsed();
    let report = explore(&ExploreConfig::new(3), |_, _, _| {}).unwrap();
    let blocked = |p| report.case(p, Some(FailureCase::CoordinatorBeforeAnyDecision)).blocked;
    let sum = |p| report.summary(p).cloned().unwrap_or_default();
    let (c, n, k) = (sum(CORNUS), sum(TWOPC_NAIVE), sum(TWOPC));
    let ok = out.status.success()
        && elapsed < VERIFY_LIMIT
        && report.failed() == 0
        && c.traces > 0
        && c.blocked_storage_alive == 0
        && blocked(TWOPC_NAIVE) >= 1
        && blocked(TWOPC) >= 1;
    let detail = format!(
        "exit={} runtime={:.1}s traces: cornus={} 2pc-naive={} 2pc-cooperative={} failed={} cornus blocked={} \
         2pc blocked at coordinator crash before any decision: naive={} cooperative={}",
        out.status.code().unwrap_or(-1),
        elapsed.as_secs_f64(),
        c.traces,
        n.traces,
        k.traces,
        report.failed(),
        c.blocked,
        blocked(TWOPC_NAIVE),
        blocked(TWOPC),
    );
    line(4, "exhaustive crash-point exploration", ok, &detail);
    ok
}

fn log_once_linearizable() -> bool {
    let mut violations = 0;
    for seed in 0..LIN_SCHEDULES {
        let o = run_schedule(seed);
        let replies: Vec<&LogState> = o.history.iter().filter_map(|h| h.ret.as_ref()).filter_map(|(_, r)| r.as_ref().ok()).collect();
        let agree = replies.iter().all(|&&r| r == o.surviving);
        let one_vote = o.votes_in_slot == usize::from(o.first.is_some());
        if !(agree && one_vote && linearize(LogKind::Participant, &o.history).is_some()) {
            violations += 1;
        }
    }
    line(5, "LogOnce linearizability", violations == 0, &format!("{LIN_SCHEDULES} schedules x 8 writers, {violations} violations"));
    violations == 0
}

fn mutation_kill() -> bool {
    let mut ex = ExploreConfig::new(3);
    ex.protocols = vec![CORNUS];
    ex.mutation = Some(Mutation::TerminationPlainLog);
    let (mut ac1, mut unstable) = (0, 0);
    explore(&ex, |_, _, v| {
        ac1 += usize::from(v.fails(Property::Ac1));
        unstable += usize::from(v.fails(Property::DecisionStable));
    })
    .unwrap();
    let ok = ac1 + unstable > 0;
    line(6, "plain log in termination is caught", ok, &format!("AC1 failing traces={ac1}, DECISION-STABLE failing traces={unstable}"));
    ok
}

fn read_only() -> bool {
    let mut detail = Vec::new();
    let mut ok = true;
    for protocol in [CORNUS, TWOPC] {
        let mut cfg = BenchConfig::new(protocol, 4);
        cfg.duration_us = 300_000;
        cfg.seed = 3;
        cfg.workload.read_only_fraction = 0.3;
        let (r, _) = run_bench(&cfg).unwrap();
        let ro = r.class(TxnClass::ReadOnly);
        ok &= ro.count > 0 && ro.prepare_us == 0.0 && ro.commit_us == 0.0;
        detail.push(format!("{protocol} known: {} ro txns prepare={} commit={}", ro.count, ro.prepare_us, ro.commit_us));
    }

    // Unknown in advance: n2 only reads inside a read-write transaction.
    let run_one = |t: Transaction| {
        let mut cfg = SimConfig::new(CORNUS, 3).with_timing(D_US, StorageLatencyModel::fixed(W_US));
        cfg.protocol_cfg.ro_known_in_advance = false;
        run(cfg, Workload::Scripted(vec![ScriptedTxn::new(t)])).unwrap().trace
    };
    let mixed = {
        let mut accesses = std::collections::BTreeMap::new();
        accesses.insert(NodeId(1), vec![Access::write(1)]);
        accesses.insert(NodeId(2), vec![Access::read(2)]);
        Transaction::new(TxnId::new(NodeId(0), 1), accesses).unwrap()
    };
    let id = mixed.id;
    let trace = run_one(mixed);
    let ro_vote = trace.events.iter().any(|e| {
        matches!(e.kind, TraceKind::SlotWrite { log, field: SlotField::Vote, rec: RecordType::VoteYes, .. } if log == LogId::participant(NodeId(2)))
    });
    let cp_mixed = critical_path_writes(&trace, id);
    let cp_all = critical_path_writes(&run_one(txn(2, 1)), id);
    ok &= ro_vote && cp_mixed == Some(1) && cp_mixed == cp_all;
    detail.push(format!(
        "cornus unknown: ro participant logs VOTE_YES={ro_vote} critical-path writes={cp_mixed:?} (all-write txn {cp_all:?})"
    ));
    line(7, "read-only transactions", ok, &detail.join("; "));
    ok
}

fn redis_smoke() -> bool {
    let name = "live Redis commit and terminator abort";
    let Ok(url) = std::env::var("CORNUS_REDIS_URL") else {
        skip(8, name, "CORNUS_REDIS_URL not set");
        return true;
    };
    let mut cfg = RedisConfig::new(url.clone());
    cfg.timeout = Duration::from_millis(500);
    let store = match RedisStore::connect(&cfg) {
        Ok(s) => s,
        Err(e) => {
            skip(8, name, &format!("{url} unreachable: {e}"));
            return true;
        }
    };
    let cases = run_smoke(&store, |log, txn| store.clear(log, txn)).unwrap();
    let ok = cases.iter().all(|c| c.ok());
    let detail: Vec<String> = cases
        .iter()
        .map(|c| {
            let matched = c.slots.iter().filter(|s| s.matches()).count();
            format!("{}: {:?} slots matching {matched}/{}", c.name, c.decision, c.slots.len())
        })
        .collect();
    line(8, name, ok, &format!("{url} {}", detail.join("; ")));
    ok
}

#[test]
fn acceptance() {
    let results = [
        rtt_accounting(),
        write_elimination(),
        speedup(),
        failure_matrix(),
        log_once_linearizable(),
        mutation_kill(),
        read_only(),
        redis_smoke(),
    ];
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, &ok)| !ok).map(|(i, _)| i + 1).collect();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
