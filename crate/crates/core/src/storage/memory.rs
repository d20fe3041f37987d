use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use super::{LogStore, OpKind, Origin, StorageError, StorageOp, StorageReply};
use crate::types::{LogId, LogState, Record, RecordType, SlotField, TxnId, TxnLogSlot};

/// Outcome of applying one operation: the reply plus the field it wrote, if any.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Applied {
    pub reply: StorageReply,
    pub wrote: Option<(SlotField, RecordType)>,
}

/// In-memory linearizable log store. Every operation on a slot runs inside
/// one critical section.
#[derive(Debug)]
pub struct MemoryStore {
    slots: Mutex<HashMap<(LogId, TxnId), TxnLogSlot>>,
    available: AtomicBool,
}

impl Default for MemoryStore {
    fn default() -> Self {
        MemoryStore { slots: Mutex::new(HashMap::new()), available: AtomicBool::new(true) }
    }
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_available(&self, up: bool) {
        self.available.store(up, Ordering::SeqCst);
    }

    pub fn is_available(&self) -> bool {
        self.available.load(Ordering::SeqCst)
    }

    pub fn slot(&self, log: LogId, txn: TxnId) -> TxnLogSlot {
        self.slots.lock().unwrap().get(&(log, txn)).copied().unwrap_or_default()
    }

    /// Applies an operation and reports which field changed.
    pub fn apply(&self, op: &StorageOp, origin: Origin) -> Applied {
        if !self.is_available() {
            return Applied { reply: Err(StorageError::Unavailable("memory store is down".into())), wrote: None };
        }
        let mut slots = self.slots.lock().unwrap();
        let key = (op.log, op.txn);
        let record = |ty| Record { ty, writer: origin.node, time: origin.time };
        match op.kind {
            OpKind::Read => Applied { reply: Ok(slots.get(&key).map(|s| s.state()).unwrap_or(LogState::None)), wrote: None },
            OpKind::LogOnce(rec) => {
                let slot = slots.entry(key).or_default();
                match slot.log_once(record(rec)) {
                    Ok((state, wrote)) => Applied { reply: Ok(state), wrote: wrote.map(|f| (f, rec)) },
                    Err(e) => Applied { reply: Err(StorageError::from_slot(op.log, op.txn, e)), wrote: None },
                }
            }
            OpKind::Log(rec) => {
                let slot = slots.entry(key).or_default();
                match slot.log(record(rec), op.log.kind) {
                    Ok(wrote) => Applied { reply: Ok(slot.state()), wrote: wrote.map(|f| (f, rec)) },
                    Err(e) => Applied { reply: Err(StorageError::from_slot(op.log, op.txn, e)), wrote: None },
                }
            }
        }
    }
}

impl LogStore for MemoryStore {
    fn log_once(&self, origin: Origin, log: LogId, txn: TxnId, rec: RecordType) -> Result<LogState, StorageError> {
        self.apply(&StorageOp::log_once(log, txn, rec), origin).reply
    }

    fn log(&self, origin: Origin, log: LogId, txn: TxnId, rec: RecordType) -> Result<(), StorageError> {
        self.apply(&StorageOp::log(log, txn, rec), origin).reply.map(|_| ())
    }

    fn read_state(&self, log: LogId, txn: TxnId) -> Result<LogState, StorageError> {
        self.apply(&StorageOp::read(log, txn), Origin::new(log.owner, Default::default())).reply
    }
}

#[cfg(test)]
mod tests {
    use std::sync::{Arc, Barrier};
    use std::thread;

    use super::*;
    use crate::types::{NodeId, VirtualTime};

    fn origin(n: u32) -> Origin {
        Origin::new(NodeId(n), VirtualTime(0))
    }

    fn ids() -> (LogId, TxnId) {
        (LogId::participant(NodeId(1)), TxnId::new(NodeId(0), 1))
    }

    #[test]
    fn log_once_examples() {
        let (log, txn) = ids();
        let s = MemoryStore::new();
        assert_eq!(s.log_once(origin(1), log, txn, RecordType::VoteYes), Ok(LogState::VoteYes));
        assert_eq!(s.log_once(origin(2), log, txn, RecordType::Abort), Ok(LogState::VoteYes));
        s.log(origin(1), log, txn, RecordType::Commit).unwrap();
        assert_eq!(s.log_once(origin(2), log, txn, RecordType::Abort), Ok(LogState::Committed));
        let slot = s.slot(log, txn);
        assert_eq!(slot.vote().unwrap().writer, NodeId(1));
        assert_eq!(slot.decision().unwrap().ty, RecordType::Commit);
    }

    #[test]
    fn log_examples() {
        let (log, txn) = ids();
        let s = MemoryStore::new();
        assert_eq!(s.read_state(log, txn), Ok(LogState::None));
        s.log(origin(1), log, txn, RecordType::Abort).unwrap();
        assert_eq!(s.slot(log, txn).vote().unwrap().ty, RecordType::Abort);
        assert_eq!(s.read_state(log, txn), Ok(LogState::Aborted));
        assert!(matches!(s.log(origin(1), log, txn, RecordType::Commit), Err(StorageError::IllegalTransition { .. })));
    }

    #[test]
    fn terminator_abort_is_readable() {
        let (log, txn) = ids();
        let s = MemoryStore::new();
        assert_eq!(s.log_once(origin(2), log, txn, RecordType::Abort), Ok(LogState::Aborted));
        assert_eq!(s.read_state(log, txn), Ok(LogState::Aborted));
        // the owner's late vote loses
        assert_eq!(s.log_once(origin(1), log, txn, RecordType::VoteYes), Ok(LogState::Aborted));
    }

    #[test]
    fn unavailable_store_rejects() {
        let (log, txn) = ids();
        let s = MemoryStore::new();
        s.set_available(false);
        assert!(matches!(s.read_state(log, txn), Err(StorageError::Unavailable(_))));
        s.set_available(true);
        assert_eq!(s.read_state(log, txn), Ok(LogState::None));
    }

    #[test]
    fn racing_vote_and_abort_have_one_winner() {
        // Both linearization orders, enumerated explicitly.
        let (log, txn) = ids();
        for abort_first in [false, true] {
            let s = MemoryStore::new();
            let (a, b) = if abort_first {
                let a = s.log_once(origin(2), log, txn, RecordType::Abort).unwrap();
                let b = s.log_once(origin(1), log, txn, RecordType::VoteYes).unwrap();
                (a, b)
            } else {
                let b = s.log_once(origin(1), log, txn, RecordType::VoteYes).unwrap();
                let a = s.log_once(origin(2), log, txn, RecordType::Abort).unwrap();
                (a, b)
            };
            let expected = if abort_first { LogState::Aborted } else { LogState::VoteYes };
            assert_eq!((a, b), (expected, expected));
        }

        // And with real threads: whichever wins, both observe the winner.
        for _ in 0..200 {
            let s = Arc::new(MemoryStore::new());
            let barrier = Arc::new(Barrier::new(2));
            let handles: Vec<_> = [RecordType::VoteYes, RecordType::Abort]
                .into_iter()
                .enumerate()
                .map(|(i, rec)| {
                    let s = Arc::clone(&s);
                    let barrier = Arc::clone(&barrier);
                    thread::spawn(move || {
                        barrier.wait();
                        s.log_once(origin(i as u32 + 1), log, txn, rec).unwrap()
                    })
                })
                .collect();
            let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
            assert_eq!(results[0], results[1]);
            assert_eq!(s.read_state(log, txn).unwrap(), results[0]);
        }
    }
}
