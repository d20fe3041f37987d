//! The event-handler contract shared by both commit protocols.
//!
//! A protocol node is a single-threaded state machine: it consumes one
//! [`Input`] at a time and emits [`Effect`]s. It performs no I/O itself, so
//! the same code runs under the deterministic simulator and the explorer.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::message::Message;
use crate::storage::{StorageOp, StorageReply};
use crate::types::{Decision, NodeId, ParseError, Transaction, TxnId, VirtualTime};

/// Node-local storage request id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ReqId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TimerKind {
    /// Participant waiting for VOTE-REQ.
    VoteReq,
    /// Coordinator waiting for votes.
    Votes,
    /// Participant waiting for the decision.
    Decision,
    /// Participant waiting for termination-protocol responses.
    Termination,
    /// Coordinator waiting for termination-protocol responses.
    CoordinatorTermination,
    /// Baseline 2PC: waiting for answers to a decision query.
    Query,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimerKey {
    pub txn: TxnId,
    pub kind: TimerKind,
}

impl TimerKey {
    pub fn new(txn: TxnId, kind: TimerKind) -> Self {
        TimerKey { txn, kind }
    }
}

#[derive(Clone, Debug)]
pub enum Input {
    /// Coordinator: execution finished, start the commit protocol.
    Begin(Arc<Transaction>),
    /// Participant: execution finished here and locks are held.
    Join {
        txn: Arc<Transaction>,
        vote_yes: bool,
    },
    Message {
        from: NodeId,
        msg: Message,
    },
    Timer(TimerKey),
    Storage {
        req: ReqId,
        reply: StorageReply,
    },
    /// The node restarted with empty memory; these are the transactions it
    /// was involved in.
    Recover {
        txns: Vec<Arc<Transaction>>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Effect {
    /// The commit protocol for `txn` started at its coordinator.
    Begin {
        txn: TxnId,
        participants: Vec<NodeId>,
    },
    Send {
        to: NodeId,
        msg: Message,
    },
    Storage {
        req: ReqId,
        op: StorageOp,
    },
    /// Arms (or re-arms) a timer.
    SetTimer {
        key: TimerKey,
        after_us: u64,
    },
    CancelTimer(TimerKey),
    /// This node reached its final decision.
    Decide {
        txn: TxnId,
        decision: Decision,
    },
    /// The coordinator answered the transaction's caller.
    Reply {
        txn: TxnId,
        decision: Decision,
    },
    /// Coordinator finished collecting votes; used for latency breakdowns.
    PrepareDone {
        txn: TxnId,
    },
    /// Release the transaction's locks at this node.
    Release {
        txn: TxnId,
    },
    /// This node leaves the protocol without a decision (read-only exit).
    Leave {
        txn: TxnId,
    },
    /// The node observed something the protocol rules out.
    Fault {
        txn: TxnId,
        detail: String,
    },
}

pub trait CommitProtocol {
    fn node(&self) -> NodeId;

    fn handle(&mut self, now: VirtualTime, input: Input, out: &mut Vec<Effect>);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TerminationMode {
    /// Uncertain participants wait for the coordinator.
    Naive,
    /// Uncertain participants also ask their peers.
    Cooperative,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProtocolKind {
    Cornus,
    TwoPc(TerminationMode),
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProtocolKind::Cornus => "cornus",
            ProtocolKind::TwoPc(TerminationMode::Naive) => "2pc-naive",
            ProtocolKind::TwoPc(TerminationMode::Cooperative) => "2pc",
        })
    }
}

impl FromStr for ProtocolKind {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cornus" => Ok(ProtocolKind::Cornus),
            "2pc" | "2pc-cooperative" => Ok(ProtocolKind::TwoPc(TerminationMode::Cooperative)),
            "2pc-naive" => Ok(ProtocolKind::TwoPc(TerminationMode::Naive)),
            _ => Err(ParseError::new("protocol", s)),
        }
    }
}

/// Deliberate protocol bugs used to show that the checker catches them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mutation {
    /// The termination protocol writes ABORT with a plain `log` instead of
    /// the conditional `log_once`.
    TerminationPlainLog,
}

/// Timeouts in virtual microseconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Timeouts {
    pub vote_req_us: u64,
    pub votes_us: u64,
    pub decision_us: u64,
    pub termination_us: u64,
}

impl Timeouts {
    /// Five times one prepare round (message there and back plus one log
    /// write) for every wait.
    pub fn derived(one_way_us: u64, storage_write_us: u64) -> Self {
        let round = 2 * one_way_us + storage_write_us;
        let t = 5 * round.max(1);
        Timeouts { vote_req_us: t, votes_us: t, decision_us: t, termination_us: t }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProtocolConfig {
    pub timeouts: Timeouts,
    /// Read-only transactions are known before the commit protocol starts and
    /// skip it entirely.
    pub ro_known_in_advance: bool,
    /// Baseline 2PC: query rounds an uncertain participant runs before it
    /// waits passively for the coordinator.
    pub query_rounds: u32,
    pub mutation: Option<Mutation>,
}

impl ProtocolConfig {
    pub fn new(timeouts: Timeouts) -> Self {
        ProtocolConfig { timeouts, ro_known_in_advance: true, query_rounds: 3, mutation: None }
    }
}

pub fn new_engine(kind: ProtocolKind, node: NodeId, cfg: ProtocolConfig) -> Box<dyn CommitProtocol + Send> {
    match kind {
        ProtocolKind::Cornus => Box::new(crate::cornus::CornusNode::new(node, cfg)),
        ProtocolKind::TwoPc(mode) => Box::new(crate::twopc::TwoPcNode::new(node, cfg, mode)),
    }
}

/// Allocates request ids and remembers what each outstanding request is for.
#[derive(Debug)]
pub(crate) struct Requests<P> {
    next: u64,
    pending: std::collections::BTreeMap<ReqId, (StorageOp, P)>,
}

impl<P: Clone> Requests<P> {
    pub(crate) fn new() -> Self {
        Requests { next: 0, pending: Default::default() }
    }

    pub(crate) fn issue(&mut self, op: StorageOp, purpose: P, out: &mut Vec<Effect>) -> ReqId {
        let req = ReqId(self.next);
        self.next += 1;
        self.pending.insert(req, (op, purpose));
        out.push(Effect::Storage { req, op });
        req
    }

    pub(crate) fn complete(&mut self, req: ReqId) -> Option<(StorageOp, P)> {
        self.pending.remove(&req)
    }

    /// Drops every outstanding request matching `pred`; their replies will be ignored.
    pub(crate) fn forget(&mut self, mut pred: impl FnMut(&P) -> bool) {
        self.pending.retain(|_, (_, p)| !pred(p));
    }
}
