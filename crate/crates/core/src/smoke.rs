//! End-to-end check of a storage backend against the in-memory store.
//!
//! Two Cornus transactions run in the simulator with the backend attached as
//! a mirror: every storage operation is executed on both and the replies are
//! compared. The first transaction commits. In the second a participant
//! crashes before logging its vote, so the coordinator terminates it by
//! writing ABORT into that participant's log with `log_once`. Afterwards the
//! state of every touched slot is read back from both stores.

use std::collections::HashSet;
use std::fmt;

use crate::node::ProtocolKind;
use crate::sim::{CrashPoint, FaultPlan, ParticipantCrash, ScriptedTxn, Sim, SimConfig, SimError, Workload};
use crate::storage::{LogStore, OpKind, StorageError};
use crate::trace::{Actor, Trace, TraceKind};
use crate::types::{Access, Decision, LogId, LogState, NodeId, RecordType, Transaction, TxnId};

const NODES: u32 = 3;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlotComparison {
    pub log: LogId,
    pub txn: TxnId,
    pub memory: LogState,
    pub backend: Result<LogState, String>,
}

impl SlotComparison {
    pub fn matches(&self) -> bool {
        self.backend.as_ref() == Ok(&self.memory)
    }
}

#[derive(Clone, Debug)]
pub struct SmokeCase {
    pub name: &'static str,
    pub txn: TxnId,
    pub decision: Option<Decision>,
    pub expected: Decision,
    /// A node wrote ABORT into another node's log and got ABORT back.
    pub terminator_abort: bool,
    /// Reply mismatches reported by the simulator.
    pub errors: Vec<String>,
    pub slots: Vec<SlotComparison>,
    pub trace: Trace,
}

impl SmokeCase {
    pub fn ok(&self) -> bool {
        self.decision == Some(self.expected)
            && self.errors.is_empty()
            && self.slots.iter().all(SlotComparison::matches)
            && (self.expected == Decision::Commit || self.terminator_abort)
    }
}

impl fmt::Display for SmokeCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let decision = self.decision.map_or("none".to_string(), |d| d.to_string());
        write!(f, "{} {}: decision={decision} (want {})", self.name, self.txn, self.expected)?;
        if self.expected == Decision::Abort {
            write!(f, " terminator_abort={}", self.terminator_abort)?;
        }
        for s in &self.slots {
            let backend = match &s.backend {
                Ok(st) => st.code().to_string(),
                Err(e) => format!("error({e})"),
            };
            write!(f, "\n  state-{}-{} memory={} backend={backend}", s.log, s.txn, s.memory.code())?;
        }
        for e in &self.errors {
            write!(f, "\n  {e}")?;
        }
        Ok(())
    }
}

fn transaction(seq: u64) -> Transaction {
    let accesses = (1..NODES).map(|p| (NodeId(p), vec![Access::write(u64::from(p))])).collect();
    Transaction::new(TxnId::new(NodeId(0), seq), accesses).expect("non-empty")
}

fn slots() -> Vec<LogId> {
    let mut logs: Vec<LogId> = (0..NODES).map(|n| LogId::participant(NodeId(n))).collect();
    logs.push(LogId::coordinator(NodeId(0)));
    logs
}

fn terminator_abort(trace: &Trace) -> bool {
    let mut issued = HashSet::new();
    trace.events.iter().any(|e| match (&e.kind, e.actor) {
        (TraceKind::Store { req, op }, Actor::Node(n)) => {
            if op.kind == OpKind::LogOnce(RecordType::Abort) && op.log.owner != n {
                issued.insert(*req);
            }
            false
        }
        (TraceKind::StoreDone { req, reply }, _) => issued.contains(req) && reply == &Ok(LogState::Aborted),
        _ => false,
    })
}

/// Runs both scenarios against `backend`. `clear` resets a slot in the
/// backend before the scenarios run.
pub fn run_smoke(
    backend: &dyn LogStore,
    mut clear: impl FnMut(LogId, TxnId) -> Result<(), StorageError>,
) -> Result<Vec<SmokeCase>, SmokeError> {
    let commit = ("commit", transaction(1), FaultPlan::none(), Decision::Commit);
    let crash = CrashPoint::Participant(NodeId(2), ParticipantCrash::BeforeLoggingVote).fault(NodeId(0), NODES - 1, None);
    let abort = ("terminator-abort", transaction(2), FaultPlan::none().crash(crash), Decision::Abort);

    let mut cases = Vec::new();
    for (name, txn, faults, expected) in [commit, abort] {
        let id = txn.id;
        for log in slots() {
            clear(log, id)?;
        }
        let mut cfg = SimConfig::new(ProtocolKind::Cornus, NODES);
        cfg.faults = faults;
        let result = Sim::new(cfg, Workload::Scripted(vec![ScriptedTxn::new(txn)]))?.with_mirror(backend).run()?;
        let errors = result
            .trace
            .events
            .iter()
            .filter_map(|e| match &e.kind {
                TraceKind::Error { detail, .. } => Some(detail.clone()),
                _ => None,
            })
            .collect();
        let slots = slots()
            .into_iter()
            .map(|log| SlotComparison {
                log,
                txn: id,
                memory: result.store.slot(log, id).state(),
                backend: backend.read_state(log, id).map_err(|e| e.to_string()),
            })
            .collect();
        cases.push(SmokeCase {
            name,
            txn: id,
            decision: result.outcome(id).and_then(|o| o.decision()),
            expected,
            terminator_abort: terminator_abort(&result.trace),
            errors,
            slots,
            trace: result.trace,
        });
    }
    Ok(cases)
}

#[derive(Debug, thiserror::Error)]
pub enum SmokeError {
    #[error("storage backend: {0}")]
    Storage(#[from] StorageError),
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::MemoryStore;

    #[test]
    fn memory_backend_passes_both_cases() {
        let backend = MemoryStore::new();
        let cases = run_smoke(&backend, |_, _| Ok(())).unwrap();
        assert_eq!(cases.len(), 2);
        for c in &cases {
            assert!(c.ok(), "{c}");
        }
        let abort = &cases[1];
        assert!(abort.terminator_abort);
        let crashed = abort.slots.iter().find(|s| s.log == LogId::participant(NodeId(2))).unwrap();
        assert_eq!(crashed.memory, LogState::Aborted);
    }

    #[test]
    fn diverging_backend_is_reported() {
        // The backend already holds an ABORT vote for the committing txn.
        let backend = MemoryStore::new();
        let txn = transaction(1).id;
        backend
            .log_once(
                crate::storage::Origin::new(NodeId(1), crate::types::VirtualTime::ZERO),
                LogId::participant(NodeId(1)),
                txn,
                RecordType::Abort,
            )
            .unwrap();
        let cases = run_smoke(&backend, |_, _| Ok(())).unwrap();
        assert!(!cases[0].ok());
        assert!(!cases[0].errors.is_empty());
    }
}
