//! Randomized concurrent LogOnce histories on one slot, for checking the
//! store against the linearizability search.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::check::HistoryOp;
use crate::storage::{MemoryStore, OpKind, Origin, StorageOp};
use crate::types::{LogId, LogState, NodeId, RecordType, TxnId, VirtualTime};

pub const WRITERS: u32 = 8;

#[derive(Debug)]
pub struct ScheduleOutcome {
    pub history: Vec<HistoryOp>,
    /// Record type of the operation that took effect first.
    pub first: Option<RecordType>,
    pub surviving: LogState,
    pub votes_in_slot: usize,
}

/// One randomized schedule: every writer calls, takes effect and returns at
/// random times; some callers crash before the reply arrives and their
/// operation may or may not have been applied.
pub fn run_schedule(seed: u64) -> ScheduleOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let log = LogId::participant(NodeId(1));
    let txn = TxnId::new(NodeId(0), seed);
    let store = MemoryStore::new();

    struct W {
        op: StorageOp,
        call: u64,
        apply: Option<u64>,
        ret: Option<u64>,
    }
    let writers: Vec<W> = (0..WRITERS)
        .map(|_| {
            let rec = if rng.gen_bool(0.5) { RecordType::VoteYes } else { RecordType::Abort };
            let call = rng.gen_range(0..100);
            let apply = call + rng.gen_range(0..50);
            let ret = apply + rng.gen_range(0..50);
            let crashed = rng.gen_bool(0.1);
            let applied = !crashed || rng.gen_bool(0.5);
            W { op: StorageOp::log_once(log, txn, rec), call, apply: applied.then_some(apply), ret: (!crashed).then_some(ret) }
        })
        .collect();

    let mut by_apply: Vec<usize> = (0..writers.len()).filter(|&i| writers[i].apply.is_some()).collect();
    by_apply.sort_by_key(|&i| (writers[i].apply, i));
    let first = by_apply.first().map(|&i| match writers[i].op.kind {
        OpKind::LogOnce(r) => r,
        _ => unreachable!(),
    });
    let mut replies = vec![None; writers.len()];
    for &i in &by_apply {
        let origin = Origin::new(NodeId(i as u32), VirtualTime(writers[i].apply.unwrap()));
        replies[i] = Some(writers[i].op.execute(&store, origin).map_err(|e| e.to_string()));
    }

    // Event indices: calls sort before returns at equal times, which only
    // widens the set of concurrent operations.
    let mut points: Vec<(u64, u8, usize)> = Vec::new();
    for (i, w) in writers.iter().enumerate() {
        points.push((w.call, 0, i));
        if let Some(r) = w.ret {
            points.push((r, 1, i));
        }
    }
    points.sort();
    let mut call_idx = vec![0; writers.len()];
    let mut ret_idx = vec![None; writers.len()];
    for (idx, &(_, kind, i)) in points.iter().enumerate() {
        if kind == 0 {
            call_idx[i] = idx;
        } else {
            ret_idx[i] = Some(idx);
        }
    }
    let history = writers
        .iter()
        .enumerate()
        .map(|(i, w)| HistoryOp {
            op: w.op,
            call: call_idx[i],
            ret: ret_idx[i].map(|idx| (idx, replies[i].clone().expect("returned ops were applied"))),
        })
        .collect();
    let slot = store.slot(log, txn);
    ScheduleOutcome { history, first, surviving: slot.state(), votes_in_slot: usize::from(slot.vote().is_some()) }
}
