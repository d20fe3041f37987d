//! Command-line behaviour: CSV schema and golden output, flag validation and
//! the verify modes.

use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn cornus(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cornus")).args(args).env_remove("CORNUS_REDIS_URL").env_remove("CORNUS_TIMEOUT_US").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn bench_csv(protocol: &str) -> String {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.csv");
    let o = cornus(&[
        "bench",
        "--protocol",
        protocol,
        "--storage",
        "memory",
        "--nodes",
        "4",
        "--theta",
        "0",
        "--seed",
        "7",
        "--duration-virtual-ms",
        "200",
        "--read-only-fraction",
        "0.2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    fs::read_to_string(out).unwrap()
}

fn golden(name: &str, actual: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::write(&path, actual).unwrap();
    }
    assert_eq!(actual, fs::read_to_string(&path).unwrap(), "{name} differs from the pinned output");
}

#[test]
fn csv_matches_pinned_output() {
    let csv = bench_csv("cornus");
    assert_eq!(
        csv.lines().next().unwrap(),
        "protocol,nodes,theta,txn_class,count,mean_us,p50_us,p99_us,exec_us,prepare_us,commit_us,abort_us,abort_rate"
    );
    assert_eq!(csv.lines().count(), 5);
    golden("cornus_seed7.csv", &csv);
    assert_eq!(csv, bench_csv("cornus"));
    golden("2pc_seed7.csv", &bench_csv("2pc"));
}

fn distributed_row(csv: &str) -> Vec<String> {
    let line = csv.lines().find(|l| l.contains(",distributed_rw,")).unwrap();
    line.split(',').map(str::to_string).collect()
}

#[test]
fn twopc_median_is_one_write_slower() {
    let (c, t) = (distributed_row(&bench_csv("cornus")), distributed_row(&bench_csv("2pc")));
    let num = |row: &[String], i: usize| row[i].parse::<f64>().unwrap();
    // Columns: mean_us = 5, p50_us = 6, commit_us = 10.
    assert!(num(&t, 5) > num(&c, 5));
    assert_eq!(num(&t, 6) - num(&c, 6), 1960.0);
    assert_eq!(num(&c, 10), 0.0);
}

#[test]
fn invalid_combinations_are_rejected() {
    for args in [
        &["bench", "--storage", "redis"][..],
        &["bench", "--protocol", "cornus", "--termination", "naive"],
        &["bench", "--theta", "-1"],
        &["bench", "--storage-model", "paxos:250"],
        &["bench", "--faults", "n1@bogus"],
        &["bench", "--protocol", "3pc"],
    ] {
        let o = cornus(args);
        assert!(!o.status.success(), "{args:?} was accepted");
        assert!(!o.stderr.is_empty(), "{args:?} printed no error");
    }
}

#[test]
fn smoke_against_memory_passes() {
    let o = cornus(&["bench", "--smoke"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("PASS commit") && s.contains("PASS terminator-abort"), "{s}");
}

#[test]
fn storage_down_blocks_cornus() {
    let o = cornus(&["verify", "--storage-down"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.lines().any(|l| l.starts_with("cornus") && l.ends_with("BLOCKED")), "{s}");
    assert!(s.contains("cause=storage-down"), "{s}");
}

#[test]
fn injected_bug_fails_verification() {
    let o = cornus(&["verify", "--nodes", "3", "--inject-bug", "skip-logonce"]);
    assert!(!o.status.success());
    let s = stdout(&o);
    assert!(s.contains("AC1 FAIL") || s.contains("DECISION-STABLE FAIL"), "{s}");
}
