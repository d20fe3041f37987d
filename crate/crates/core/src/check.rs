//! Trace checker for the atomic-commit properties.
//!
//! Works purely from the observable trace: transaction announcements, slot
//! writes, decisions, replies, crashes and storage outages. It never looks at
//! protocol state, so the same checks apply to Cornus and to 2PC.
//!
//! Properties, per transaction:
//! - AC1: every decision equals the global decision.
//! - AC2: a node never decides twice, or two different ways.
//! - AC3/AC4: commit only if every voting participant logged `VOTE_YES`, and
//!   with all votes yes and no failures the outcome is commit.
//! - AC5: every live node that took part decides or leaves; otherwise the
//!   transaction is reported blocked along with the reason.
//! - Decision stability: the global decision, rebuilt after each slot write, never
//!   changes once determined.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use crate::message::{Message, Vote};
use crate::node::ProtocolKind;
use crate::storage::{OpKind, StorageOp};
use crate::trace::{Actor, Trace, TraceKind};
use crate::types::{
    global_decision, Decision, GlobalDecision, LogId, LogKind, LogState, NodeId, Record, RecordType, SlotField, TxnId, TxnLogSlot,
    VirtualTime,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Property {
    /// Trace-level sanity: write-once fields, no activity from crashed
    /// nodes, no node-reported faults, linearizable slot histories.
    Structure,
    Ac1,
    Ac2,
    Ac34,
    Ac5,
    DecisionStable,
}

impl Property {
    pub const ALL: [Property; 6] =
        [Property::Structure, Property::Ac1, Property::Ac2, Property::Ac34, Property::Ac5, Property::DecisionStable];
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Property::Structure => "STRUCTURE",
            Property::Ac1 => "AC1",
            Property::Ac2 => "AC2",
            Property::Ac34 => "AC3-4",
            Property::Ac5 => "AC5",
            Property::DecisionStable => "DECISION-STABLE",
        })
    }
}

/// Why a transaction cannot make progress.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockCause {
    StorageDown,
    CoordinatorDown,
}

impl fmt::Display for BlockCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockCause::StorageDown => "storage-down",
            BlockCause::CoordinatorDown => "coordinator-down",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Status {
    Pass,
    /// `witness` holds indices into the trace's events.
    Fail {
        witness: Vec<usize>,
        reason: String,
    },
    Blocked {
        nodes: Vec<NodeId>,
        cause: BlockCause,
        last_progress: VirtualTime,
    },
}

impl Status {
    fn fail(witness: Vec<usize>, reason: impl Into<String>) -> Self {
        Status::Fail { witness, reason: reason.into() }
    }

    pub fn is_fail(&self) -> bool {
        matches!(self, Status::Fail { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Finding {
    pub txn: Option<TxnId>,
    pub property: Property,
    pub status: Status,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.txn {
            Some(t) => write!(f, "txn={t} ")?,
            None => f.write_str("txn=- ")?,
        }
        write!(f, "property={} ", self.property)?;
        match &self.status {
            Status::Pass => f.write_str("status=PASS"),
            Status::Fail { witness, reason } => {
                let w: Vec<String> = witness.iter().map(|i| i.to_string()).collect();
                write!(f, "status=FAIL witness={} reason={reason:?}", w.join(","))
            }
            Status::Blocked { nodes, cause, last_progress } => {
                let n: Vec<String> = nodes.iter().map(|n| n.to_string()).collect();
                write!(f, "status=BLOCKED nodes={} cause={cause} last_progress={}", n.join(","), last_progress.0)
            }
        }
    }
}

/// One record per property per transaction, plus trace-level structure.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Verdict {
    pub findings: Vec<Finding>,
}

impl Verdict {
    pub fn failures(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.status.is_fail())
    }

    pub fn blocked(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| matches!(f.status, Status::Blocked { .. }))
    }

    pub fn passed(&self) -> bool {
        self.failures().next().is_none()
    }

    pub fn is_blocked(&self) -> bool {
        self.blocked().next().is_some()
    }

    /// Blocked for a reason other than a storage outage.
    pub fn blocked_with_storage_alive(&self) -> bool {
        self.blocked().any(|f| matches!(f.status, Status::Blocked { cause: BlockCause::CoordinatorDown, .. }))
    }

    pub fn fails(&self, property: Property) -> bool {
        self.failures().any(|f| f.property == property)
    }

    /// Machine-readable report, one line per finding.
    pub fn report(&self) -> String {
        let mut s = String::new();
        for f in &self.findings {
            s.push_str(&f.to_string());
            s.push('\n');
        }
        s
    }
}

struct TxnInfo {
    coordinator: NodeId,
    participants: Vec<NodeId>,
    start: VirtualTime,
    began: bool,
    joined: BTreeSet<NodeId>,
    left: BTreeSet<NodeId>,
    /// (event index, node, incarnation, decision)
    decides: Vec<(usize, NodeId, u32, Decision)>,
    replies: Vec<(usize, Decision)>,
    /// Vote responses delivered to the coordinator.
    votes_delivered: BTreeSet<NodeId>,
}

#[derive(Default)]
struct NodeLife {
    up: bool,
    inc: u32,
}

/// Checks one complete trace.
pub fn check(trace: &Trace) -> Verdict {
    Checker::new(trace).run()
}

struct Checker<'a> {
    trace: &'a Trace,
    protocol: ProtocolKind,
    txns: BTreeMap<TxnId, TxnInfo>,
    slots: BTreeMap<(LogId, TxnId), TxnLogSlot>,
    /// Index of the SLOT_WRITE that set each field.
    writes: BTreeMap<(LogId, TxnId, SlotField), usize>,
    findings: Vec<Finding>,
    last_fault: VirtualTime,
    storage_up: bool,
    lives: HashMap<NodeId, NodeLife>,
}

impl<'a> Checker<'a> {
    fn new(trace: &'a Trace) -> Self {
        Checker {
            trace,
            protocol: trace.header.protocol,
            txns: BTreeMap::new(),
            slots: BTreeMap::new(),
            writes: BTreeMap::new(),
            findings: Vec::new(),
            last_fault: VirtualTime::ZERO,
            storage_up: true,
            lives: HashMap::new(),
        }
    }

    fn structural(&mut self, idx: usize, reason: String, txn: Option<TxnId>) {
        self.findings.push(Finding { txn, property: Property::Structure, status: Status::fail(vec![idx], reason) });
    }

    fn life(&mut self, n: NodeId) -> &mut NodeLife {
        self.lives.entry(n).or_insert(NodeLife { up: true, inc: 0 })
    }

    fn run(mut self) -> Verdict {
        // Pass 1: rebuild slots and per-transaction facts.
        let mut write_seq: Vec<(usize, TxnId)> = Vec::new();
        for (idx, ev) in self.trace.events.iter().enumerate() {
            if let Actor::Node(n) = ev.actor {
                let life = self.life(n);
                let alive = life.up;
                match ev.kind {
                    TraceKind::Crash if alive => {
                        life.up = false;
                        life.inc += 1;
                        self.last_fault = self.last_fault.max(ev.time);
                        continue;
                    }
                    TraceKind::Recover if !alive => {
                        life.up = true;
                        self.last_fault = self.last_fault.max(ev.time);
                        continue;
                    }
                    _ if !alive => {
                        self.structural(idx, format!("{n} acted while crashed"), ev.txn());
                        continue;
                    }
                    _ => {}
                }
            }
            let inc = ev.node().map_or(0, |n| self.life(n).inc);
            match &ev.kind {
                TraceKind::Txn { txn, coordinator, participants, .. } => {
                    self.txns.insert(
                        *txn,
                        TxnInfo {
                            coordinator: *coordinator,
                            participants: participants.clone(),
                            start: ev.time,
                            began: false,
                            joined: BTreeSet::new(),
                            left: BTreeSet::new(),
                            decides: Vec::new(),
                            replies: Vec::new(),
                            votes_delivered: BTreeSet::new(),
                        },
                    );
                }
                TraceKind::StorageDown => {
                    self.storage_up = false;
                    self.last_fault = self.last_fault.max(ev.time);
                }
                TraceKind::StorageUp => {
                    self.storage_up = true;
                    self.last_fault = self.last_fault.max(ev.time);
                }
                TraceKind::Error { txn, detail } => self.structural(idx, detail.clone(), Some(*txn)),
                TraceKind::SlotWrite { log, txn, field, rec, .. } => {
                    let record = Record { ty: *rec, writer: ev.node().unwrap_or(NodeId(u32::MAX)), time: ev.time };
                    let slot = self.slots.entry((*log, *txn)).or_default();
                    if slot.replay_write(*field, record).is_err() {
                        self.structural(idx, format!("second write to {field} of slot {log}/{txn}"), Some(*txn));
                    } else {
                        self.writes.insert((*log, *txn, *field), idx);
                        write_seq.push((idx, *txn));
                    }
                }
                _ => {}
            }
            let Some(n) = ev.node() else { continue };
            let Some(info) = ev.txn().and_then(|t| self.txns.get_mut(&t)) else {
                continue;
            };
            match &ev.kind {
                TraceKind::Begin { .. } => {
                    info.began = true;
                }
                TraceKind::Join { .. } => {
                    info.joined.insert(n);
                }
                TraceKind::Leave { .. } => {
                    info.left.insert(n);
                }
                TraceKind::Decide { decision, .. } => info.decides.push((idx, n, inc, *decision)),
                TraceKind::Reply { decision, .. } => info.replies.push((idx, *decision)),
                TraceKind::Deliver { from, msg: Message::VoteResp { .. } } if n == info.coordinator => {
                    info.votes_delivered.insert(*from);
                }
                _ => {}
            }
        }
        self.linearizability();
        self.decision_stable(&write_seq);
        let ids: Vec<TxnId> = self.txns.keys().copied().collect();
        for t in ids {
            self.check_txn(t);
        }
        Verdict { findings: self.findings }
    }

    /// Participants whose votes count: everyone except those that left.
    fn voters(&self, info: &TxnInfo) -> Vec<NodeId> {
        info.participants.iter().copied().filter(|p| !info.left.contains(p)).collect()
    }

    fn global(&self, txn: TxnId, slots: &BTreeMap<(LogId, TxnId), TxnLogSlot>) -> GlobalDecision {
        let info = &self.txns[&txn];
        match self.protocol {
            ProtocolKind::Cornus => {
                let empty = TxnLogSlot::default();
                let voters = self.voters(info);
                global_decision(voters.iter().map(|&p| slots.get(&(LogId::participant(p), txn)).unwrap_or(&empty)))
            }
            ProtocolKind::TwoPc(_) => {
                match slots.get(&(LogId::coordinator(info.coordinator), txn)).and_then(|s| s.decision()).map(|r| r.ty) {
                    Some(RecordType::Commit) => GlobalDecision::Commit,
                    Some(_) => GlobalDecision::Abort,
                    None => GlobalDecision::Undetermined,
                }
            }
        }
    }

    fn decision_stable(&mut self, write_seq: &[(usize, TxnId)]) {
        let mut replayed: BTreeMap<(LogId, TxnId), TxnLogSlot> = BTreeMap::new();
        let mut first: BTreeMap<TxnId, (usize, GlobalDecision)> = BTreeMap::new();
        let mut failed: BTreeSet<TxnId> = BTreeSet::new();
        for &(idx, txn) in write_seq {
            let TraceKind::SlotWrite { log, field, rec, .. } = &self.trace.events[idx].kind else { unreachable!() };
            let rec =
                Record { ty: *rec, writer: self.trace.events[idx].node().unwrap_or(NodeId(u32::MAX)), time: self.trace.events[idx].time };
            let _ = replayed.entry((*log, txn)).or_default().replay_write(*field, rec);
            if !self.txns.contains_key(&txn) || failed.contains(&txn) {
                continue;
            }
            let g = self.global(txn, &replayed);
            match first.get(&txn) {
                None if g != GlobalDecision::Undetermined => {
                    first.insert(txn, (idx, g));
                }
                Some(&(at, was)) if was != g => {
                    failed.insert(txn);
                    self.findings.push(Finding {
                        txn: Some(txn),
                        property: Property::DecisionStable,
                        status: Status::fail(vec![at, idx], format!("global decision moved from {was:?} to {g:?}")),
                    });
                }
                _ => {}
            }
        }
        for &txn in self.txns.keys() {
            if !failed.contains(&txn) {
                self.findings.push(Finding { txn: Some(txn), property: Property::DecisionStable, status: Status::Pass });
            }
        }
    }

    fn linearizability(&mut self) {
        for (slot, history) in slot_histories(self.trace) {
            if linearize(slot.0.kind, &history).is_none() {
                let witness = history.iter().flat_map(|h| [Some(h.call), h.ret.as_ref().map(|r| r.0)]).flatten().collect();
                self.findings.push(Finding {
                    txn: Some(slot.1),
                    property: Property::Structure,
                    status: Status::fail(witness, format!("slot {}/{} history is not linearizable", slot.0, slot.1)),
                });
            }
        }
    }

    fn check_txn(&mut self, txn: TxnId) {
        let global = self.global(txn, &self.slots);
        let info = &self.txns[&txn];
        let mut out = Vec::new();

        // AC1
        let mut bad: Vec<usize> = Vec::new();
        for &(idx, _, _, d) in &info.decides {
            let ok = match global {
                GlobalDecision::Commit => d == Decision::Commit,
                GlobalDecision::Abort => d == Decision::Abort,
                // Nothing decisive reached storage; only abort is safe.
                GlobalDecision::Undetermined => d == Decision::Abort,
            };
            if !ok {
                bad.push(idx);
            }
        }
        if info.began {
            for &(idx, d) in &info.replies {
                if global.decision().is_some_and(|g| g != d) || (global == GlobalDecision::Undetermined && d == Decision::Commit) {
                    bad.push(idx);
                }
            }
        }
        out.push(if bad.is_empty() {
            (Property::Ac1, Status::Pass)
        } else {
            bad.sort_unstable();
            (Property::Ac1, Status::fail(bad, format!("decision disagrees with global decision {global:?}")))
        });

        // AC2
        let mut ac2 = Status::Pass;
        let mut seen: BTreeMap<NodeId, (usize, u32, Decision)> = BTreeMap::new();
        for &(idx, n, inc, d) in &info.decides {
            if let Some(&(prev, pinc, pd)) = seen.get(&n) {
                if pinc == inc {
                    ac2 = Status::fail(vec![prev, idx], format!("{n} decided twice"));
                    break;
                }
                if pd != d {
                    ac2 = Status::fail(vec![prev, idx], format!("{n} changed its decision after recovery"));
                    break;
                }
            }
            seen.insert(n, (idx, inc, d));
        }
        out.push((Property::Ac2, ac2));

        // AC3/AC4
        let voters = self.voters(info);
        let vote_of = |p: NodeId| self.slots.get(&(LogId::participant(p), txn)).and_then(|s| s.vote()).map(|r| r.ty);
        let all_yes = voters.iter().all(|&p| vote_of(p) == Some(RecordType::VoteYes));
        let mut ac34 = Status::Pass;
        if let Some(&(idx, ..)) = info.decides.iter().find(|d| d.3 == Decision::Commit) {
            if let Some(&p) = voters.iter().find(|&&p| vote_of(p) != Some(RecordType::VoteYes)) {
                let mut w = vec![idx];
                w.extend(self.writes.get(&(LogId::participant(p), txn, SlotField::Vote)));
                ac34 = Status::fail(w, format!("commit without a yes vote from {p}"));
            }
        }
        let fault_free = !self.trace.events.iter().any(|e| matches!(e.kind, TraceKind::Crash | TraceKind::StorageDown));
        if ac34 == Status::Pass && all_yes && info.began {
            let justified = match self.protocol {
                // Every vote is yes, so the global decision is commit and
                // AC1 already forbids an abort.
                ProtocolKind::Cornus => true,
                // The 2PC coordinator may abort on a timeout: only an abort
                // taken with every vote in hand in a fault-free run is wrong.
                ProtocolKind::TwoPc(_) => {
                    !fault_free
                        || info
                            .decides
                            .iter()
                            .filter(|d| d.1 == info.coordinator && d.3 == Decision::Abort)
                            .all(|&(idx, ..)| !voters.iter().all(|p| self.vote_delivered_before(txn, *p, idx)))
                }
            };
            if !justified {
                let w = info.decides.iter().filter(|d| d.3 == Decision::Abort).map(|d| d.0).collect();
                ac34 = Status::fail(w, "abort with every vote yes and no failure");
            }
        }
        out.push((Property::Ac34, ac34));

        out.push((Property::Ac5, self.ac5(txn)));

        for (property, status) in out {
            self.findings.push(Finding { txn: Some(txn), property, status });
        }
    }

    fn vote_delivered_before(&self, txn: TxnId, p: NodeId, before: usize) -> bool {
        let coord = self.txns[&txn].coordinator;
        self.trace.events[..before].iter().any(|e| {
            e.node() == Some(coord)
                && matches!(&e.kind, TraceKind::Deliver { from, msg: Message::VoteResp { txn: t, vote } }
                    if *from == p && *t == txn && *vote == Vote::Yes)
        })
    }

    fn ac5(&self, txn: TxnId) -> Status {
        let info = &self.txns[&txn];
        // Only data holders must decide; a coordinator without data keeps
        // no state across a crash.
        let involved = &info.joined;
        let alive = |n: &NodeId| self.lives.get(n).is_none_or(|l| l.up);
        let decided: BTreeSet<NodeId> = info.decides.iter().map(|d| d.1).collect();
        let stuck: Vec<NodeId> = involved.iter().filter(|n| alive(n) && !decided.contains(n) && !info.left.contains(n)).copied().collect();
        if stuck.is_empty() {
            if self.protocol == ProtocolKind::Cornus {
                // Bounded: every surviving decision arrives within the
                // bound of the later of the start and the last fault.
                let from = info.start.max(self.last_fault);
                let bound = self.trace.header.ac5_bound_us;
                if let Some(&(idx, n, ..)) =
                    info.decides.iter().find(|d| d.0 > 0 && self.trace.events[d.0].time.since(from) > bound && alive(&d.1))
                {
                    return Status::fail(vec![idx], format!("{n} decided more than {bound} us after {}", from.0));
                }
            }
            return Status::Pass;
        }
        let last_progress = self.trace.events.iter().filter(|e| e.txn() == Some(txn)).map(|e| e.time).max().unwrap_or(info.start);
        let cause = if !self.storage_up {
            BlockCause::StorageDown
        } else if !alive(&info.coordinator) {
            BlockCause::CoordinatorDown
        } else {
            let idx = self.trace.events.len().saturating_sub(1);
            return Status::fail(vec![idx], format!("{} never decided with coordinator and storage up", list(&stuck)));
        };
        Status::Blocked { nodes: stuck, cause, last_progress }
    }
}

fn list(nodes: &[NodeId]) -> String {
    nodes.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(",")
}

/// One storage operation as seen from the issuing node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HistoryOp {
    pub op: StorageOp,
    /// Event index of the call.
    pub call: usize,
    /// Event index and reply of the return; `None` if the caller crashed
    /// first, in which case the operation may or may not have taken effect.
    pub ret: Option<(usize, Result<LogState, String>)>,
}

/// Per-slot operation histories, keyed by slot.
pub fn slot_histories(trace: &Trace) -> BTreeMap<(LogId, TxnId), Vec<HistoryOp>> {
    let mut by_req: BTreeMap<u64, HistoryOp> = BTreeMap::new();
    for (idx, ev) in trace.events.iter().enumerate() {
        match &ev.kind {
            TraceKind::Store { req, op } => {
                by_req.insert(*req, HistoryOp { op: *op, call: idx, ret: None });
            }
            TraceKind::StoreDone { req, reply } => {
                if let Some(h) = by_req.get_mut(req) {
                    h.ret = Some((idx, reply.clone()));
                }
            }
            _ => {}
        }
    }
    let mut out: BTreeMap<(LogId, TxnId), Vec<HistoryOp>> = BTreeMap::new();
    for h in by_req.into_values() {
        out.entry((h.op.log, h.op.txn)).or_default().push(h);
    }
    out
}

fn model_apply(slot: &mut TxnLogSlot, kind: LogKind, op: &StorageOp) -> Result<LogState, ()> {
    let rec = |ty| Record { ty, writer: NodeId(0), time: VirtualTime::ZERO };
    match op.kind {
        OpKind::LogOnce(ty) => slot.log_once(rec(ty)).map(|(s, _)| s).map_err(|_| ()),
        OpKind::Log(ty) => slot.log(rec(ty), kind).map(|_| slot.state()).map_err(|_| ()),
        OpKind::Read => Ok(slot.state()),
    }
}

/// Searches for a sequential order of `history`, consistent with real time,
/// in which a single slot returns every observed reply. Returns the order
/// (indices into `history`; pending operations that never took effect are
/// omitted) or `None` when no such order exists.
pub fn linearize(kind: LogKind, history: &[HistoryOp]) -> Option<Vec<usize>> {
    fn go(
        kind: LogKind,
        h: &[HistoryOp],
        slot: TxnLogSlot,
        used: &mut Vec<bool>,
        order: &mut Vec<usize>,
        seen: &mut BTreeSet<(Vec<bool>, u64)>,
    ) -> bool {
        if h.iter().zip(used.iter()).all(|(op, &u)| u || op.ret.is_none()) {
            return true;
        }
        // Memoise on (used set, slot contents) to keep the search small.
        let key = (used.clone(), slot_fingerprint(&slot));
        if !seen.insert(key) {
            return false;
        }
        // Earliest return among unplaced completed operations: anything
        // called after it cannot go first.
        let horizon = h
            .iter()
            .zip(used.iter())
            .filter(|(op, &u)| !u && op.ret.is_some())
            .map(|(op, _)| op.ret.as_ref().unwrap().0)
            .min()
            .unwrap_or(usize::MAX);
        for i in 0..h.len() {
            if used[i] || h[i].call > horizon {
                continue;
            }
            let mut next = slot;
            let result = model_apply(&mut next, kind, &h[i].op);
            if let Some((_, observed)) = &h[i].ret {
                let matches = match (observed, &result) {
                    (Ok(a), Ok(b)) => a == b,
                    (Err(_), Err(())) => true,
                    _ => false,
                };
                if !matches {
                    continue;
                }
            }
            used[i] = true;
            order.push(i);
            if go(kind, h, next, used, order, seen) {
                return true;
            }
            order.pop();
            used[i] = false;
        }
        false
    }
    let mut used = vec![false; history.len()];
    let mut order = Vec::new();
    let mut seen = BTreeSet::new();
    go(kind, history, TxnLogSlot::default(), &mut used, &mut order, &mut seen).then_some(order)
}

fn slot_fingerprint(slot: &TxnLogSlot) -> u64 {
    let code = |r: Option<Record>| match r.map(|r| r.ty) {
        None => 0,
        Some(RecordType::VoteYes) => 1,
        Some(RecordType::Abort) => 2,
        Some(RecordType::Commit) => 3,
    };
    code(slot.vote()) * 4 + code(slot.decision())
}

/// Length of the longest chain of strictly sequential storage writes for
/// `txn` that complete before its caller reply. Parallel writes count once.
pub fn critical_path_writes(trace: &Trace, txn: TxnId) -> Option<usize> {
    let reply = trace.events.iter().position(|e| matches!(e.kind, TraceKind::Reply { txn: t, .. } if t == txn))?;
    let mut issued: BTreeMap<u64, usize> = BTreeMap::new();
    let mut spans: Vec<(usize, usize)> = Vec::new();
    for (idx, ev) in trace.events[..reply].iter().enumerate() {
        match &ev.kind {
            TraceKind::Store { req, op } if op.txn == txn && op.is_write() => {
                issued.insert(*req, idx);
            }
            TraceKind::StoreDone { req, .. } => {
                if let Some(start) = issued.remove(req) {
                    spans.push((start, idx));
                }
            }
            _ => {}
        }
    }
    spans.sort_unstable();
    // Longest chain where each write is issued after the previous completed.
    let mut best = vec![1usize; spans.len()];
    for i in 0..spans.len() {
        for j in 0..i {
            if spans[j].1 < spans[i].0 {
                best[i] = best[i].max(best[j] + 1);
            }
        }
    }
    Some(best.into_iter().max().unwrap_or(0))
}

/// Aggregate over a set of traces.
#[derive(Clone, Debug, Default)]
pub struct Summary {
    pub traces: usize,
    pub passed: usize,
    pub failed: usize,
    pub blocked: usize,
    pub blocked_storage_alive: usize,
    /// Index of the first failing trace, with its report.
    pub first_failure: Option<(usize, String)>,
    /// Cornus traces blocked with storage alive.
    pub cornus_blocked_storage_alive: usize,
}

impl Summary {
    /// Requirements: no trace fails; Cornus never blocks while storage is up.
    /// 2PC may block.
    pub fn requirements_hold(&self) -> bool {
        self.failed == 0 && self.cornus_blocked_storage_alive == 0
    }
}

pub fn check_all<'t>(traces: impl IntoIterator<Item = &'t Trace>) -> Summary {
    let mut s = Summary::default();
    for (i, trace) in traces.into_iter().enumerate() {
        s.add(i, trace, &check(trace));
    }
    s
}

impl Summary {
    pub fn add(&mut self, index: usize, trace: &Trace, v: &Verdict) {
        self.traces += 1;
        if !v.passed() {
            self.failed += 1;
            if self.first_failure.is_none() {
                let lines: String = v.failures().map(|f| format!("{f}\n")).collect();
                self.first_failure = Some((index, lines));
            }
        } else if v.is_blocked() {
            self.blocked += 1;
        } else {
            self.passed += 1;
        }
        if v.blocked_with_storage_alive() {
            self.blocked_storage_alive += 1;
            if trace.header.protocol == ProtocolKind::Cornus {
                self.cornus_blocked_storage_alive += 1;
            }
        }
    }
}
