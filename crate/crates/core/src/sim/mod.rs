//! Deterministic discrete-event simulator.
//!
//! Events are drawn from a queue ordered by `(time, seq)`. Given the same
//! configuration, workload and seed, a run produces a byte-identical trace.
//! Every node is a [`CommitProtocol`] engine wrapped with a lock table and
//! the execution phase; storage requests go through the in-memory backend
//! with latency charged by the configured [`StorageLatencyModel`].

mod fault;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use self::fault::{CoordinatorCrash, CrashPoint, FailureCase, Fault, FaultPlan, ParticipantCrash, StorageOutage, Trigger};

use crate::message::{Message, MessageKind};
use crate::node::{new_engine, CommitProtocol, Effect, Input, ProtocolConfig, ProtocolKind, ReqId, Timeouts, TimerKey};
use crate::storage::{LogStore, MemoryStore, Origin, StorageLatencyModel, StorageOp, StorageReply};
use crate::trace::{Actor, Trace, TraceHeader, TraceKind};
use crate::types::{Decision, LogId, NodeId, Transaction, TxnId, VirtualTime};
use crate::workload::{Generator, LockResult, LockTable, WorkloadConfig, WorkloadError};

/// One-way delay one network hop costs, in microseconds.
pub const DEFAULT_ONE_WAY_US: u64 = 250;

/// Caps a run that never quiesces.
const MAX_EVENTS: u64 = 50_000_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("a simulation needs at least one node")]
    NoNodes,
    #[error("transaction {txn} names node {node}, but only {nodes} nodes exist")]
    UnknownNode { txn: TxnId, node: NodeId, nodes: u32 },
    #[error("fault plan names node {0}, which does not exist")]
    UnknownFaultNode(NodeId),
    #[error("duplicate transaction id {0}")]
    DuplicateTxn(TxnId),
    #[error(transparent)]
    Storage(#[from] crate::storage::LatencyModelError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("run exceeded {0} events without quiescing")]
    Runaway(u64),
}

/// Delay applied to messages matching every `Some` field.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinkOverride {
    pub from: Option<NodeId>,
    pub to: Option<NodeId>,
    pub kind: Option<MessageKind>,
    pub delay_us: u64,
}

impl LinkOverride {
    fn matches(&self, from: NodeId, to: NodeId, kind: MessageKind) -> bool {
        self.from.is_none_or(|f| f == from) && self.to.is_none_or(|t| t == to) && self.kind.is_none_or(|k| k == kind)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetConfig {
    pub one_way_us: u64,
    /// Extra delay drawn uniformly from `0..=jitter_us` per message.
    pub jitter_us: u64,
    /// First match wins.
    pub overrides: Vec<LinkOverride>,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { one_way_us: DEFAULT_ONE_WAY_US, jitter_us: 0, overrides: Vec::new() }
    }
}

impl NetConfig {
    fn max_delay_us(&self) -> u64 {
        let base = self.one_way_us + self.jitter_us;
        self.overrides.iter().map(|o| o.delay_us).fold(base, u64::max)
    }
}

#[derive(Clone, Debug)]
pub struct ScriptedTxn {
    pub txn: Arc<Transaction>,
    pub start: VirtualTime,
    /// Participants that vote to abort.
    pub no_voters: BTreeSet<NodeId>,
    /// Run the execution phase (lock acquisition over the network) before
    /// the commit protocol. Otherwise every participant is ready at `start`.
    pub execute: bool,
}

impl ScriptedTxn {
    pub fn new(txn: Transaction) -> Self {
        ScriptedTxn { txn: Arc::new(txn), start: VirtualTime::ZERO, no_voters: BTreeSet::new(), execute: false }
    }

    pub fn at(mut self, start: VirtualTime) -> Self {
        self.start = start;
        self
    }

    pub fn no_voters(mut self, nodes: impl IntoIterator<Item = NodeId>) -> Self {
        self.no_voters = nodes.into_iter().collect();
        self
    }

    pub fn with_execution(mut self) -> Self {
        self.execute = true;
        self
    }
}

#[derive(Clone, Debug)]
pub enum Workload {
    Scripted(Vec<ScriptedTxn>),
    /// Closed loop: each worker starts its next transaction when the previous
    /// one finishes, until `duration_us` of virtual time has passed.
    Generated {
        cfg: WorkloadConfig,
        workers_per_node: u32,
        duration_us: u64,
    },
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub protocol: ProtocolKind,
    pub protocol_cfg: ProtocolConfig,
    pub nodes: u32,
    pub net: NetConfig,
    pub storage: StorageLatencyModel,
    pub faults: FaultPlan,
    pub seed: u64,
    /// Stop processing events after this time. `None` picks a horizon far
    /// past every timeout.
    pub horizon_us: Option<u64>,
}

impl SimConfig {
    /// Defaults: 250 us one-way delay, fixed 1960 us storage latency and
    /// timeouts derived from both.
    pub fn new(protocol: ProtocolKind, nodes: u32) -> Self {
        let storage = StorageLatencyModel::default();
        SimConfig {
            protocol,
            protocol_cfg: ProtocolConfig::new(Timeouts::derived(DEFAULT_ONE_WAY_US, storage.write_latency_us())),
            nodes,
            net: NetConfig::default(),
            storage,
            faults: FaultPlan::none(),
            seed: 0,
            horizon_us: None,
        }
    }

    /// Sets delay and storage model and re-derives the timeouts.
    pub fn with_timing(mut self, one_way_us: u64, storage: StorageLatencyModel) -> Self {
        self.net.one_way_us = one_way_us;
        self.storage = storage;
        self.protocol_cfg.timeouts = Timeouts::derived(one_way_us, storage.write_latency_us());
        self
    }

    /// Upper bound on how long after the later of its start and the last
    /// fault a surviving node may take to decide under Cornus: every wait
    /// times out once, then three termination rounds.
    pub fn ac5_bound_us(&self) -> u64 {
        let t = self.protocol_cfg.timeouts;
        let d = self.net.max_delay_us();
        let s = self.storage.write_latency_us().max(self.storage.read_latency_us());
        t.vote_req_us + t.votes_us + t.decision_us + 3 * t.termination_us + 4 * (d + s)
    }

    fn max_timeout_us(&self) -> u64 {
        let t = self.protocol_cfg.timeouts;
        t.vote_req_us.max(t.votes_us).max(t.decision_us).max(t.termination_us)
    }
}

/// Controls tie-breaking for the explorer. At each point where several
/// events for the same actor are due at the same time, the simulator takes
/// `prefix[i]` (or 0 past the prefix) and records `(chosen, options)`.
#[derive(Clone, Debug, Default)]
pub struct Schedule {
    pub prefix: Vec<u32>,
    pub taken: Vec<(u32, u32)>,
}

impl Schedule {
    pub fn replay(prefix: Vec<u32>) -> Self {
        Schedule { prefix, taken: Vec::new() }
    }

    fn choose(&mut self, options: usize) -> usize {
        let i = self.taken.len();
        let c = self.prefix.get(i).copied().unwrap_or(0).min(options as u32 - 1);
        self.taken.push((c, options as u32));
        c as usize
    }
}

/// Per-transaction timings, as the coordinator saw them.
#[derive(Clone, Debug)]
pub struct TxnOutcome {
    pub txn: Arc<Transaction>,
    pub start: VirtualTime,
    /// Execution finished and the commit protocol was handed the transaction.
    pub exec_done: Option<VirtualTime>,
    pub prepare_done: Option<VirtualTime>,
    pub reply: Option<(VirtualTime, Decision)>,
    /// Aborted by a lock conflict before the commit protocol.
    pub early_abort: bool,
}

impl TxnOutcome {
    pub fn latency_us(&self) -> Option<u64> {
        self.reply.map(|(t, _)| t.since(self.start))
    }

    pub fn decision(&self) -> Option<Decision> {
        self.reply.map(|(_, d)| d)
    }
}

pub struct SimResult {
    pub trace: Trace,
    pub txns: Vec<TxnOutcome>,
    pub end: VirtualTime,
    pub events: u64,
    pub store: MemoryStore,
}

impl SimResult {
    pub fn outcome(&self, txn: TxnId) -> Option<&TxnOutcome> {
        self.txns.iter().find(|o| o.txn.id == txn)
    }
}

#[derive(Clone, Debug)]
enum EventKind {
    StartTxn(usize),
    WorkerNext(NodeId),
    Deliver { from: NodeId, to: NodeId, msg: Message },
    Timer { node: NodeId, inc: u32, key: TimerKey, gen: u64 },
    StorageApply(u64),
    StorageComplete(u64),
    Crash(NodeId),
    Recover(NodeId),
    StorageDown,
    StorageUp,
}

/// Who an event touches; only events for the same actor are reordered by
/// the explorer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum TieActor {
    Sim,
    Node(NodeId),
    Slot(LogId, TxnId),
}

struct PendingReq {
    node: NodeId,
    inc: u32,
    local: ReqId,
    op: StorageOp,
    reply: Option<StorageReply>,
}

struct SimNode {
    engine: Box<dyn CommitProtocol + Send>,
    up: bool,
    inc: u32,
    locks: LockTable,
    involved: BTreeMap<TxnId, Arc<Transaction>>,
    /// Transactions this node left; recovery ignores them.
    left: BTreeSet<TxnId>,
    sent: HashMap<MessageKind, u32>,
    delivered: HashMap<MessageKind, u32>,
    issued: u32,
    acked: u32,
    next_seq: u64,
    /// Decisions announced in the current incarnation. A co-located node
    /// decides once even though both of its roles learn the outcome.
    decided: HashMap<TxnId, Decision>,
}

struct TxnRun {
    outcome: TxnOutcome,
    no_voters: BTreeSet<NodeId>,
    execute: bool,
    awaiting_exec: BTreeSet<NodeId>,
    granted: BTreeSet<NodeId>,
    from_worker: bool,
}

pub struct Sim<'a> {
    cfg: SimConfig,
    queue: BTreeMap<(VirtualTime, u64), EventKind>,
    seq: u64,
    now: VirtualTime,
    nodes: Vec<SimNode>,
    timer_gen: HashMap<(NodeId, TimerKey), u64>,
    link_last: HashMap<(NodeId, NodeId), VirtualTime>,
    store: MemoryStore,
    mirror: Option<&'a dyn LogStore>,
    storage_up: bool,
    held: Vec<u64>,
    reqs: BTreeMap<u64, PendingReq>,
    next_req: u64,
    txns: Vec<TxnRun>,
    txn_index: HashMap<TxnId, usize>,
    fired: Vec<bool>,
    rng: ChaCha8Rng,
    generator: Option<Generator>,
    duration_us: u64,
    trace: Trace,
    schedule: Option<&'a mut Schedule>,
    horizon: VirtualTime,
}

impl<'a> Sim<'a> {
    pub fn new(cfg: SimConfig, workload: Workload) -> Result<Self, SimError> {
        if cfg.nodes == 0 {
            return Err(SimError::NoNodes);
        }
        cfg.storage.validate()?;
        for f in &cfg.faults.crashes {
            if f.node.0 >= cfg.nodes {
                return Err(SimError::UnknownFaultNode(f.node));
            }
        }
        let nodes = (0..cfg.nodes)
            .map(|i| SimNode {
                engine: new_engine(cfg.protocol, NodeId(i), cfg.protocol_cfg),
                up: true,
                inc: 0,
                locks: LockTable::new(),
                involved: BTreeMap::new(),
                left: BTreeSet::new(),
                sent: HashMap::new(),
                delivered: HashMap::new(),
                issued: 0,
                acked: 0,
                next_seq: 0,
                decided: HashMap::new(),
            })
            .collect();
        let header = TraceHeader { protocol: cfg.protocol, ac5_bound_us: cfg.ac5_bound_us() };
        let mut sim = Sim {
            queue: BTreeMap::new(),
            seq: 0,
            now: VirtualTime::ZERO,
            nodes,
            timer_gen: HashMap::new(),
            link_last: HashMap::new(),
            store: MemoryStore::new(),
            mirror: None,
            storage_up: true,
            held: Vec::new(),
            reqs: BTreeMap::new(),
            next_req: 0,
            txns: Vec::new(),
            txn_index: HashMap::new(),
            fired: vec![false; cfg.faults.crashes.len()],
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            generator: None,
            duration_us: 0,
            trace: Trace::new(header),
            schedule: None,
            horizon: VirtualTime(u64::MAX),
            cfg,
        };
        let mut last_start = VirtualTime::ZERO;
        match workload {
            Workload::Scripted(list) => {
                for s in list {
                    let id = s.txn.id;
                    for &p in s.txn.participants.iter().chain([&s.txn.coordinator]) {
                        if p.0 >= sim.cfg.nodes {
                            return Err(SimError::UnknownNode { txn: id, node: p, nodes: sim.cfg.nodes });
                        }
                    }
                    if sim.txn_index.contains_key(&id) {
                        return Err(SimError::DuplicateTxn(id));
                    }
                    last_start = last_start.max(s.start);
                    let idx = sim.register(s.txn, s.start, s.no_voters, s.execute, false);
                    sim.schedule_at(s.start, EventKind::StartTxn(idx));
                }
            }
            Workload::Generated { cfg, workers_per_node, duration_us } => {
                let cfg = WorkloadConfig { partitions: sim.cfg.nodes, ..cfg };
                sim.generator = Some(Generator::new(cfg)?);
                sim.duration_us = duration_us;
                last_start = VirtualTime(duration_us);
                for n in 0..sim.cfg.nodes {
                    for _ in 0..workers_per_node {
                        sim.schedule_at(VirtualTime::ZERO, EventKind::WorkerNext(NodeId(n)));
                    }
                }
            }
        }
        let mut last_fault = VirtualTime::ZERO;
        for f in sim.cfg.faults.crashes.clone() {
            if let Trigger::AtTime(t) = f.trigger {
                sim.schedule_at(t, EventKind::Crash(f.node));
                last_fault = last_fault.max(t);
            }
        }
        for o in sim.cfg.faults.outages.clone() {
            sim.schedule_at(o.at, EventKind::StorageDown);
            last_fault = last_fault.max(o.at);
            if let Some(u) = o.until {
                sim.schedule_at(u, EventKind::StorageUp);
                last_fault = last_fault.max(u);
            }
        }
        let recover_max = sim.cfg.faults.crashes.iter().filter_map(|f| f.recover_after_us).max().unwrap_or(0);
        sim.horizon = VirtualTime(match sim.cfg.horizon_us {
            Some(h) => h,
            None => last_start.0.max(last_fault.0) + recover_max + 100 * sim.cfg.max_timeout_us().max(1) + 100 * sim.cfg.ac5_bound_us(),
        });
        Ok(sim)
    }

    /// Mirrors every storage operation onto a second backend and records an
    /// ERROR event whenever its reply differs from the in-memory one.
    pub fn with_mirror(mut self, mirror: &'a dyn LogStore) -> Self {
        self.mirror = Some(mirror);
        self
    }

    pub fn with_schedule(mut self, schedule: &'a mut Schedule) -> Self {
        self.schedule = Some(schedule);
        self
    }

    fn register(
        &mut self,
        txn: Arc<Transaction>,
        start: VirtualTime,
        no_voters: BTreeSet<NodeId>,
        execute: bool,
        from_worker: bool,
    ) -> usize {
        let idx = self.txns.len();
        self.txn_index.insert(txn.id, idx);
        self.txns.push(TxnRun {
            outcome: TxnOutcome { txn, start, exec_done: None, prepare_done: None, reply: None, early_abort: false },
            no_voters,
            execute,
            awaiting_exec: BTreeSet::new(),
            granted: BTreeSet::new(),
            from_worker,
        });
        idx
    }

    fn schedule_at(&mut self, time: VirtualTime, kind: EventKind) {
        self.queue.insert((time, self.seq), kind);
        self.seq += 1;
    }

    fn trace(&mut self, actor: Actor, kind: TraceKind) {
        self.trace.push(self.now, actor, kind);
    }

    pub fn run(mut self) -> Result<SimResult, SimError> {
        for i in 0..self.cfg.faults.crashes.len() {
            let f = self.cfg.faults.crashes[i];
            if f.trigger == Trigger::AtStart {
                self.fired[i] = true;
                self.crash(f.node, f.recover_after_us);
            }
        }
        let mut events = 0u64;
        while let Some(key) = self.next_key() {
            if key.0 > self.horizon {
                break;
            }
            let kind = self.queue.remove(&key).unwrap();
            self.now = key.0;
            events += 1;
            if events > MAX_EVENTS {
                return Err(SimError::Runaway(MAX_EVENTS));
            }
            self.dispatch(kind);
        }
        self.trace(Actor::Sim, TraceKind::End);
        Ok(SimResult {
            trace: self.trace,
            txns: self.txns.into_iter().map(|t| t.outcome).collect(),
            end: self.now,
            events,
            store: self.store,
        })
    }

    fn actor(&self, kind: &EventKind) -> TieActor {
        match kind {
            EventKind::StartTxn(_) | EventKind::WorkerNext(_) | EventKind::StorageDown | EventKind::StorageUp => TieActor::Sim,
            EventKind::Deliver { to, .. } => TieActor::Node(*to),
            EventKind::Timer { node, .. } | EventKind::Crash(node) | EventKind::Recover(node) => TieActor::Node(*node),
            EventKind::StorageApply(id) => match self.reqs.get(id) {
                Some(r) => TieActor::Slot(r.op.log, r.op.txn),
                None => TieActor::Sim,
            },
            EventKind::StorageComplete(id) => match self.reqs.get(id) {
                Some(r) => TieActor::Node(r.node),
                None => TieActor::Sim,
            },
        }
    }

    /// Events that do nothing when dispatched: they commute with everything.
    fn is_noop(&self, kind: &EventKind) -> bool {
        let down = |n: &NodeId| !self.nodes[n.0 as usize].up;
        match kind {
            EventKind::Deliver { to, .. } => down(to),
            EventKind::Timer { node, inc, key, gen } => {
                down(node) || self.nodes[node.0 as usize].inc != *inc || self.timer_gen.get(&(*node, *key)) != Some(gen)
            }
            EventKind::StorageApply(id) | EventKind::StorageComplete(id) => match self.reqs.get(id) {
                Some(r) => down(&r.node) || self.nodes[r.node.0 as usize].inc != r.inc,
                None => true,
            },
            _ => false,
        }
    }

    /// Events of the same class at the same actor are treated as
    /// interchangeable; the explorer only reorders events of different
    /// classes.
    fn tie_class(&self, kind: &EventKind) -> (u8, String) {
        match kind {
            EventKind::Deliver { msg, .. } => (0, msg.kind().to_string()),
            EventKind::Timer { key, .. } => (1, format!("{:?}", key.kind)),
            EventKind::StorageComplete(_) => (2, String::new()),
            EventKind::StorageApply(id) => (3, format!("{:?}", self.reqs[id].op.kind)),
            EventKind::Crash(_) => (4, String::new()),
            EventKind::Recover(_) => (5, String::new()),
            _ => (6, String::new()),
        }
    }

    fn next_key(&mut self) -> Option<(VirtualTime, u64)> {
        let (&first, first_kind) = self.queue.first_key_value()?;
        if self.schedule.is_none() || self.is_noop(first_kind) {
            return Some(first);
        }
        let actor = self.actor(first_kind);
        let mut candidates = Vec::new();
        let mut classes = Vec::new();
        let mut links_seen: Vec<(NodeId, NodeId)> = Vec::new();
        for (&key, kind) in self.queue.range(first..=(first.0, u64::MAX)) {
            if self.actor(kind) != actor || self.is_noop(kind) {
                continue;
            }
            if let EventKind::Deliver { from, to, .. } = kind {
                // Links are FIFO: only the oldest message on a link may go.
                if links_seen.contains(&(*from, *to)) {
                    continue;
                }
                links_seen.push((*from, *to));
            }
            let class = self.tie_class(kind);
            if classes.contains(&class) {
                continue;
            }
            classes.push(class);
            candidates.push(key);
        }
        if candidates.len() == 1 {
            return Some(first);
        }
        let c = self.schedule.as_mut().unwrap().choose(candidates.len());
        Some(candidates[c])
    }

    fn dispatch(&mut self, kind: EventKind) {
        match kind {
            EventKind::StartTxn(idx) => self.start_txn(idx),
            EventKind::WorkerNext(node) => self.worker_next(node),
            EventKind::Deliver { from, to, msg } => self.deliver(from, to, msg),
            EventKind::Timer { node, inc, key, gen } => {
                let n = &self.nodes[node.0 as usize];
                if n.up && n.inc == inc && self.timer_gen.get(&(node, key)) == Some(&gen) {
                    self.feed(node, Input::Timer(key));
                }
            }
            EventKind::StorageApply(id) => self.storage_apply(id),
            EventKind::StorageComplete(id) => self.storage_complete(id),
            EventKind::Crash(node) => {
                if self.nodes[node.0 as usize].up {
                    let idx = self
                        .cfg
                        .faults
                        .crashes
                        .iter()
                        .enumerate()
                        .position(|(i, f)| !self.fired[i] && f.node == node && f.trigger == Trigger::AtTime(self.now));
                    let recover = idx.and_then(|i| {
                        self.fired[i] = true;
                        self.cfg.faults.crashes[i].recover_after_us
                    });
                    self.crash(node, recover);
                }
            }
            EventKind::Recover(node) => self.recover(node),
            EventKind::StorageDown => {
                if self.storage_up {
                    self.storage_up = false;
                    self.trace(Actor::Storage, TraceKind::StorageDown);
                }
            }
            EventKind::StorageUp => {
                if !self.storage_up {
                    self.storage_up = true;
                    self.trace(Actor::Storage, TraceKind::StorageUp);
                    for id in std::mem::take(&mut self.held) {
                        let op = self.reqs[&id].op;
                        let (apply, _) = self.cfg.storage.timing(&op);
                        self.schedule_at(self.now.after(apply), EventKind::StorageApply(id));
                    }
                }
            }
        }
    }

    // ---- transactions and the execution phase ----

    fn worker_next(&mut self, node: NodeId) {
        if !self.nodes[node.0 as usize].up || self.now.0 >= self.duration_us {
            return;
        }
        let n = &mut self.nodes[node.0 as usize];
        let id = TxnId::new(node, n.next_seq);
        n.next_seq += 1;
        let txn = Arc::new(self.generator.as_mut().expect("generated workload").next_txn(id));
        let idx = self.register(txn, self.now, BTreeSet::new(), true, true);
        self.start_txn(idx);
    }

    fn start_txn(&mut self, idx: usize) {
        let txn = Arc::clone(&self.txns[idx].outcome.txn);
        self.trace(
            Actor::Sim,
            TraceKind::Txn {
                txn: txn.id,
                coordinator: txn.coordinator,
                participants: txn.participants.iter().copied().collect(),
                read_only: txn.read_only,
            },
        );
        let coord = txn.coordinator;
        if !self.txns[idx].execute {
            for &p in &txn.participants {
                if self.nodes[p.0 as usize].up {
                    let yes = !self.txns[idx].no_voters.contains(&p);
                    self.join(p, &txn, yes);
                }
            }
            if self.nodes[coord.0 as usize].up {
                self.begin(idx);
            }
            return;
        }
        if !self.nodes[coord.0 as usize].up {
            return;
        }
        for &p in &txn.participants {
            if p == coord {
                if self.nodes[p.0 as usize].locks.acquire_all(txn.id, &txn.accesses[&p]) == LockResult::NoWaitAbort {
                    self.early_abort(idx);
                    return;
                }
                let yes = !self.txns[idx].no_voters.contains(&p);
                self.join(p, &txn, yes);
                self.txns[idx].granted.insert(p);
            } else {
                self.txns[idx].awaiting_exec.insert(p);
            }
        }
        if self.txns[idx].awaiting_exec.is_empty() {
            self.begin(idx);
            return;
        }
        for p in self.txns[idx].awaiting_exec.clone() {
            let msg = Message::ExecReq { txn: txn.id, accesses: txn.accesses[&p].clone() };
            self.send(coord, p, msg);
        }
    }

    fn join(&mut self, node: NodeId, txn: &Arc<Transaction>, vote_yes: bool) {
        self.nodes[node.0 as usize].involved.insert(txn.id, Arc::clone(txn));
        self.trace(Actor::Node(node), TraceKind::Join { txn: txn.id, vote_yes });
        self.feed(node, Input::Join { txn: Arc::clone(txn), vote_yes });
    }

    fn begin(&mut self, idx: usize) {
        let txn = Arc::clone(&self.txns[idx].outcome.txn);
        self.txns[idx].outcome.exec_done = Some(self.now);
        self.feed(txn.coordinator, Input::Begin(txn));
    }

    fn early_abort(&mut self, idx: usize) {
        let run = &mut self.txns[idx];
        if run.outcome.reply.is_some() {
            return;
        }
        run.outcome.early_abort = true;
        run.outcome.reply = Some((self.now, Decision::Abort));
        run.awaiting_exec.clear();
        let txn = Arc::clone(&run.outcome.txn);
        let granted = std::mem::take(&mut run.granted);
        self.trace(Actor::Node(txn.coordinator), TraceKind::Reply { txn: txn.id, decision: Decision::Abort });
        for p in granted {
            self.send(txn.coordinator, p, Message::Release { txn: txn.id });
        }
        self.txn_finished(idx);
    }

    fn txn_finished(&mut self, idx: usize) {
        if self.txns[idx].from_worker {
            let node = self.txns[idx].outcome.txn.coordinator;
            self.schedule_at(self.now, EventKind::WorkerNext(node));
        }
    }

    fn on_exec_req(&mut self, node: NodeId, from: NodeId, txn_id: TxnId, accesses: Vec<crate::types::Access>) {
        let Some(&idx) = self.txn_index.get(&txn_id) else {
            return;
        };
        let txn = Arc::clone(&self.txns[idx].outcome.txn);
        let granted = self.nodes[node.0 as usize].locks.acquire_all(txn_id, &accesses) == LockResult::Granted;
        if granted {
            let yes = !self.txns[idx].no_voters.contains(&node);
            self.join(node, &txn, yes);
        }
        self.send(node, from, Message::ExecResp { txn: txn_id, granted });
    }

    fn on_exec_resp(&mut self, from: NodeId, txn_id: TxnId, granted: bool) {
        let Some(&idx) = self.txn_index.get(&txn_id) else {
            return;
        };
        let coord = self.txns[idx].outcome.txn.coordinator;
        if self.txns[idx].outcome.reply.is_some() {
            if granted {
                self.send(coord, from, Message::Release { txn: txn_id });
            }
            return;
        }
        if !granted {
            self.early_abort(idx);
            return;
        }
        self.txns[idx].granted.insert(from);
        self.txns[idx].awaiting_exec.remove(&from);
        if self.txns[idx].awaiting_exec.is_empty() && self.txns[idx].outcome.exec_done.is_none() {
            self.begin(idx);
        }
    }

    // ---- network ----

    fn send(&mut self, from: NodeId, to: NodeId, msg: Message) {
        let kind = msg.kind();
        let delay = if from == to {
            0
        } else {
            match self.cfg.net.overrides.iter().find(|o| o.matches(from, to, kind)) {
                Some(o) => o.delay_us,
                None => {
                    let jitter = if self.cfg.net.jitter_us > 0 { self.rng.gen_range(0..=self.cfg.net.jitter_us) } else { 0 };
                    self.cfg.net.one_way_us + jitter
                }
            }
        };
        let last = self.link_last.get(&(from, to)).copied().unwrap_or(VirtualTime::ZERO);
        let at = self.now.after(delay).max(last);
        self.link_last.insert((from, to), at);
        self.trace(Actor::Node(from), TraceKind::Send { to, msg: msg.clone() });
        self.schedule_at(at, EventKind::Deliver { from, to, msg });
    }

    fn deliver(&mut self, from: NodeId, to: NodeId, msg: Message) {
        let n = &mut self.nodes[to.0 as usize];
        if !n.up {
            return;
        }
        let kind = msg.kind();
        let count = n.delivered.entry(kind).or_insert(0);
        *count += 1;
        let count = *count;
        if self.fire(to, |t| matches!(t, Trigger::BeforeDeliver { kind: k, count: c } if *k == kind && *c == count)) {
            return;
        }
        self.trace(Actor::Node(to), TraceKind::Deliver { from, msg: msg.clone() });
        match msg {
            Message::ExecReq { txn, accesses } => self.on_exec_req(to, from, txn, accesses),
            Message::ExecResp { txn, granted } => self.on_exec_resp(from, txn, granted),
            msg => self.feed(to, Input::Message { from, msg }),
        }
    }

    // ---- storage ----

    fn issue(&mut self, node: NodeId, local: ReqId, op: StorageOp) {
        let id = self.next_req;
        self.next_req += 1;
        let inc = self.nodes[node.0 as usize].inc;
        self.reqs.insert(id, PendingReq { node, inc, local, op, reply: None });
        self.trace(Actor::Node(node), TraceKind::Store { req: id, op });
        if self.storage_up {
            let (apply, _) = self.cfg.storage.timing(&op);
            self.schedule_at(self.now.after(apply), EventKind::StorageApply(id));
        } else {
            self.held.push(id);
        }
    }

    fn storage_apply(&mut self, id: u64) {
        let Some(req) = self.reqs.get(&id) else {
            return;
        };
        let node = &self.nodes[req.node.0 as usize];
        if !node.up || node.inc != req.inc {
            // The issuing node died before the request reached storage.
            self.reqs.remove(&id);
            return;
        }
        if !self.storage_up {
            self.held.push(id);
            return;
        }
        let (op, issuer) = (req.op, req.node);
        let origin = Origin::new(issuer, self.now);
        let applied = self.store.apply(&op, origin);
        if let Some((field, rec)) = applied.wrote {
            self.trace(Actor::Node(issuer), TraceKind::SlotWrite { req: id, log: op.log, txn: op.txn, field, rec });
        }
        if let Some(mirror) = self.mirror {
            let theirs = op.execute(mirror, origin);
            if theirs != applied.reply {
                self.trace(
                    Actor::Storage,
                    TraceKind::Error {
                        txn: op.txn,
                        detail: format!("mirror disagrees on #{id} {op}: memory {:?}, mirror {:?}", applied.reply, theirs),
                    },
                );
            }
        }
        self.reqs.get_mut(&id).unwrap().reply = Some(applied.reply);
        let (apply, respond) = self.cfg.storage.timing(&op);
        self.schedule_at(self.now.after(respond - apply), EventKind::StorageComplete(id));
    }

    fn storage_complete(&mut self, id: u64) {
        let Some(req) = self.reqs.remove(&id) else {
            return;
        };
        let n = &mut self.nodes[req.node.0 as usize];
        if !n.up || n.inc != req.inc {
            return;
        }
        n.acked += 1;
        let count = n.acked;
        if self.fire(req.node, |t| matches!(t, Trigger::BeforeStorageAck { count: c } if *c == count)) {
            return;
        }
        let reply = req.reply.expect("applied before completion");
        self.trace(Actor::Node(req.node), TraceKind::StoreDone { req: id, reply: reply.clone().map_err(|e| e.to_string()) });
        self.feed(req.node, Input::Storage { req: req.local, reply });
    }

    // ---- crashes ----

    /// Crashes `node` if an unfired fault for it matches; returns whether it did.
    fn fire(&mut self, node: NodeId, pred: impl Fn(&Trigger) -> bool) -> bool {
        let hit = self
            .cfg
            .faults
            .crashes
            .iter()
            .enumerate()
            .find(|(i, f)| !self.fired[*i] && f.node == node && pred(&f.trigger))
            .map(|(i, f)| (i, f.recover_after_us));
        match hit {
            Some((i, recover)) => {
                self.fired[i] = true;
                self.crash(node, recover);
                true
            }
            None => false,
        }
    }

    fn crash(&mut self, node: NodeId, recover_after_us: Option<u64>) {
        let n = &mut self.nodes[node.0 as usize];
        if !n.up {
            return;
        }
        n.up = false;
        n.inc += 1;
        n.locks.clear();
        n.decided.clear();
        self.trace(Actor::Node(node), TraceKind::Crash);
        if let Some(after) = recover_after_us {
            self.schedule_at(self.now.after(after), EventKind::Recover(node));
        }
    }

    fn recover(&mut self, node: NodeId) {
        let cfg = &self.cfg;
        let n = &mut self.nodes[node.0 as usize];
        if n.up {
            return;
        }
        n.up = true;
        n.engine = new_engine(cfg.protocol, node, cfg.protocol_cfg);
        let txns: Vec<Arc<Transaction>> = n.involved.iter().filter(|(id, _)| !n.left.contains(id)).map(|(_, t)| Arc::clone(t)).collect();
        self.trace(Actor::Node(node), TraceKind::Recover);
        self.feed(node, Input::Recover { txns });
    }

    // ---- engine plumbing ----

    fn feed(&mut self, node: NodeId, input: Input) {
        let mut out = Vec::new();
        self.nodes[node.0 as usize].engine.handle(self.now, input, &mut out);
        self.apply_effects(node, out);
    }

    fn apply_effects(&mut self, node: NodeId, effects: Vec<Effect>) {
        let actor = Actor::Node(node);
        for effect in effects {
            if !self.nodes[node.0 as usize].up {
                // Crashed part-way through the handler.
                return;
            }
            match effect {
                Effect::Begin { txn, .. } => {
                    if let Some(&idx) = self.txn_index.get(&txn) {
                        let t = Arc::clone(&self.txns[idx].outcome.txn);
                        self.nodes[node.0 as usize].involved.insert(txn, t);
                    }
                    self.trace(actor, TraceKind::Begin { txn });
                }
                Effect::Send { to, msg } => {
                    let kind = msg.kind();
                    self.send(node, to, msg);
                    let count = self.nodes[node.0 as usize].sent.entry(kind).or_insert(0);
                    *count += 1;
                    let count = *count;
                    self.fire(node, |t| matches!(t, Trigger::AfterSend { kind: k, count: c } if *k == kind && *c == count));
                }
                Effect::Storage { req, op } => {
                    self.issue(node, req, op);
                    let n = &mut self.nodes[node.0 as usize];
                    n.issued += 1;
                    let count = n.issued;
                    self.fire(node, |t| matches!(t, Trigger::AfterStorageIssue { count: c } if *c == count));
                }
                Effect::SetTimer { key, after_us } => {
                    let gen = self.timer_gen.entry((node, key)).or_insert(0);
                    *gen += 1;
                    let gen = *gen;
                    let inc = self.nodes[node.0 as usize].inc;
                    self.schedule_at(self.now.after(after_us), EventKind::Timer { node, inc, key, gen });
                }
                Effect::CancelTimer(key) => {
                    *self.timer_gen.entry((node, key)).or_insert(0) += 1;
                }
                Effect::Decide { txn, decision } => {
                    let n = &mut self.nodes[node.0 as usize];
                    if n.decided.insert(txn, decision) == Some(decision) {
                        continue;
                    }
                    self.trace(actor, TraceKind::Decide { txn, decision });
                }
                Effect::Reply { txn, decision } => {
                    self.trace(actor, TraceKind::Reply { txn, decision });
                    if let Some(&idx) = self.txn_index.get(&txn) {
                        if self.txns[idx].outcome.reply.is_none() {
                            self.txns[idx].outcome.reply = Some((self.now, decision));
                            self.txn_finished(idx);
                        }
                    }
                    self.fire(node, |t| *t == Trigger::AfterReply);
                }
                Effect::PrepareDone { txn } => {
                    if let Some(&idx) = self.txn_index.get(&txn) {
                        self.txns[idx].outcome.prepare_done.get_or_insert(self.now);
                    }
                }
                Effect::Release { txn } => self.nodes[node.0 as usize].locks.release_all(txn),
                Effect::Leave { txn } => {
                    self.nodes[node.0 as usize].left.insert(txn);
                    self.trace(actor, TraceKind::Leave { txn });
                }
                Effect::Fault { txn, detail } => self.trace(actor, TraceKind::Error { txn, detail }),
            }
        }
    }
}

/// Runs a configuration to completion.
pub fn run(cfg: SimConfig, workload: Workload) -> Result<SimResult, SimError> {
    Sim::new(cfg, workload)?.run()
}
