//! Pinned simulator output. Regenerate with `UPDATE_GOLDEN=1 cargo test`.

use std::fs;
use std::path::PathBuf;

use cornus_core::node::{ProtocolKind, TerminationMode};
use cornus_core::sim::{run, ScriptedTxn, SimConfig, Workload};
use cornus_core::trace::Trace;
use cornus_core::types::{Access, NodeId, Transaction, TxnId};

fn golden(name: &str, actual: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::write(&path, actual).unwrap();
    }
    let expected = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "{name} differs from the pinned output");
}

fn commit_trace(protocol: ProtocolKind) -> Trace {
    let accesses = (1..3).map(|p| (NodeId(p), vec![Access::write(u64::from(p))])).collect();
    let txn = Transaction::new(TxnId::new(NodeId(0), 1), accesses).unwrap();
    let cfg = SimConfig::new(protocol, 3).with_timing(250, "fixed:1960".parse().unwrap());
    run(cfg, Workload::Scripted(vec![ScriptedTxn::new(txn)])).unwrap().trace
}

#[test]
fn cornus_commit_trace() {
    let t = commit_trace(ProtocolKind::Cornus);
    golden("cornus_commit.trace", &t.to_string());
    assert_eq!(t.to_string().parse::<Trace>().unwrap(), t);
}

#[test]
fn twopc_commit_trace() {
    let t = commit_trace(ProtocolKind::TwoPc(TerminationMode::Cooperative));
    golden("2pc_commit.trace", &t.to_string());
}
