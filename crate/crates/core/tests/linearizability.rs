//! LogOnce under concurrent writers: randomized interleavings checked with
//! the linearizability search, and real threads racing on one slot.

use std::sync::{Arc, Barrier};
use std::thread;

use cornus_core::check::{linearize, HistoryOp};
use cornus_core::storage::{LogStore, MemoryStore, Origin, StorageOp};
use cornus_core::stress::{run_schedule, WRITERS};
use cornus_core::types::{LogId, LogKind, LogState, NodeId, RecordType, TxnId, VirtualTime};

const SCHEDULES: u64 = 10_000;

fn expected_state(first: Option<RecordType>) -> LogState {
    match first {
        None => LogState::None,
        Some(RecordType::VoteYes) => LogState::VoteYes,
        Some(_) => LogState::Aborted,
    }
}

#[test]
fn seeded_schedules_linearize() {
    let mut violations = Vec::new();
    for seed in 0..SCHEDULES {
        let o = run_schedule(seed);
        let want = expected_state(o.first);
        let replies_agree = o.history.iter().filter_map(|h| h.ret.as_ref()).all(|(_, r)| r == &Ok(want));
        let one_vote = o.votes_in_slot == usize::from(o.first.is_some());
        let linear = linearize(LogKind::Participant, &o.history).is_some();
        if !(replies_agree && one_vote && o.surviving == want && linear) {
            violations.push(seed);
        }
    }
    assert!(violations.is_empty(), "violating seeds: {violations:?}");
}

#[test]
fn search_rejects_contradicting_replies() {
    let log = LogId::participant(NodeId(1));
    let txn = TxnId::new(NodeId(0), 1);
    let h = |rec, call, ret, reply| HistoryOp { op: StorageOp::log_once(log, txn, rec), call, ret: Some((ret, Ok(reply))) };
    // Both writers claim to have won.
    let history = vec![h(RecordType::VoteYes, 0, 2, LogState::VoteYes), h(RecordType::Abort, 1, 3, LogState::Aborted)];
    assert!(linearize(LogKind::Participant, &history).is_none());
    // A reply that contradicts real-time order: the second call starts after
    // the first returned YES, yet claims its ABORT went first.
    let history = vec![h(RecordType::VoteYes, 0, 1, LogState::VoteYes), h(RecordType::Abort, 2, 3, LogState::Aborted)];
    assert!(linearize(LogKind::Participant, &history).is_none());
    let history = vec![h(RecordType::VoteYes, 0, 1, LogState::VoteYes), h(RecordType::Abort, 2, 3, LogState::VoteYes)];
    assert_eq!(linearize(LogKind::Participant, &history), Some(vec![0, 1]));
}

#[test]
fn threads_racing_on_one_slot_agree() {
    let store = Arc::new(MemoryStore::new());
    let log = LogId::participant(NodeId(1));
    for round in 0..500u64 {
        let txn = TxnId::new(NodeId(0), round);
        let barrier = Arc::new(Barrier::new(WRITERS as usize));
        let handles: Vec<_> = (0..WRITERS)
            .map(|w| {
                let (store, barrier) = (Arc::clone(&store), Arc::clone(&barrier));
                thread::spawn(move || {
                    let rec = if (w + round as u32).is_multiple_of(2) { RecordType::VoteYes } else { RecordType::Abort };
                    barrier.wait();
                    store.log_once(Origin::new(NodeId(w), VirtualTime::ZERO), log, txn, rec).unwrap()
                })
            })
            .collect();
        let results: Vec<LogState> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        let slot = store.slot(log, txn);
        let winner = slot.vote().expect("one vote survives");
        assert!(results.iter().all(|&r| r == slot.state()), "round {round}: {results:?}");
        assert_eq!(slot.state(), expected_state(Some(winner.ty)));
    }
}
