//! The observable history of a simulation run.
//!
//! One event per line: `<time_us> <actor> <KIND> <payload>`. The first line
//! is a header carrying the parameters the checker needs:
//!
//! ```text
//! # cornus-trace v1 protocol=cornus ac5_bound_us=41300
//! 0 sim TXN t0.1 coord=n0 parts=n1,n2 ro=0
//! 250 n1 DELIVER n0 VOTE-REQ t0.1 n1,n2
//! 1230 n1 SLOT_WRITE #0 1 t0.1 vote VOTE_YES
//! ```

use std::fmt;
use std::str::FromStr;

use crate::message::Message;
use crate::node::ProtocolKind;
use crate::storage::StorageOp;
use crate::types::{Decision, LogId, LogState, NodeId, ParseError, RecordType, SlotField, TxnId, VirtualTime};

pub const TRACE_VERSION: &str = "v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Actor {
    Sim,
    Storage,
    Node(NodeId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TraceKind {
    /// A transaction entered the system.
    Txn {
        txn: TxnId,
        coordinator: NodeId,
        participants: Vec<NodeId>,
        read_only: bool,
    },
    Begin {
        txn: TxnId,
    },
    Join {
        txn: TxnId,
        vote_yes: bool,
    },
    Send {
        to: NodeId,
        msg: Message,
    },
    Deliver {
        from: NodeId,
        msg: Message,
    },
    Store {
        req: u64,
        op: StorageOp,
    },
    SlotWrite {
        req: u64,
        log: LogId,
        txn: TxnId,
        field: SlotField,
        rec: RecordType,
    },
    StoreDone {
        req: u64,
        reply: Result<LogState, String>,
    },
    Decide {
        txn: TxnId,
        decision: Decision,
    },
    Reply {
        txn: TxnId,
        decision: Decision,
    },
    Leave {
        txn: TxnId,
    },
    Crash,
    Recover,
    StorageDown,
    StorageUp,
    Error {
        txn: TxnId,
        detail: String,
    },
    End,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEvent {
    pub time: VirtualTime,
    pub actor: Actor,
    pub kind: TraceKind,
}

impl TraceEvent {
    pub fn node(&self) -> Option<NodeId> {
        match self.actor {
            Actor::Node(n) => Some(n),
            _ => None,
        }
    }

    pub fn txn(&self) -> Option<TxnId> {
        match &self.kind {
            TraceKind::Txn { txn, .. }
            | TraceKind::Begin { txn }
            | TraceKind::Join { txn, .. }
            | TraceKind::SlotWrite { txn, .. }
            | TraceKind::Decide { txn, .. }
            | TraceKind::Reply { txn, .. }
            | TraceKind::Leave { txn }
            | TraceKind::Error { txn, .. } => Some(*txn),
            TraceKind::Send { msg, .. } | TraceKind::Deliver { msg, .. } => Some(msg.txn()),
            TraceKind::Store { op, .. } => Some(op.txn),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceHeader {
    pub protocol: ProtocolKind,
    /// Cornus liveness bound: a surviving node decides within this long after
    /// the later of the transaction's start and the last fault.
    pub ac5_bound_us: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub header: TraceHeader,
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new(header: TraceHeader) -> Self {
        Trace { header, events: Vec::new() }
    }

    pub fn push(&mut self, time: VirtualTime, actor: Actor, kind: TraceKind) {
        self.events.push(TraceEvent { time, actor, kind });
    }

    pub fn to_text(&self) -> String {
        self.to_string()
    }

    pub fn parse(text: &str) -> Result<Trace, TraceParseError> {
        text.parse()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("trace line {line}: {reason}: {text:?}")]
pub struct TraceParseError {
    pub line: usize,
    pub text: String,
    pub reason: String,
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Actor::Sim => f.write_str("sim"),
            Actor::Storage => f.write_str("storage"),
            Actor::Node(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for Actor {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sim" => Ok(Actor::Sim),
            "storage" => Ok(Actor::Storage),
            _ => Ok(Actor::Node(s.parse()?)),
        }
    }
}

fn nodes(list: &[NodeId]) -> String {
    if list.is_empty() {
        return "-".into();
    }
    list.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(",")
}

impl fmt::Display for TraceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceKind::Txn { txn, coordinator, participants, read_only } => {
                write!(f, "TXN {txn} coord={coordinator} parts={} ro={}", nodes(participants), u8::from(*read_only))
            }
            TraceKind::Begin { txn } => write!(f, "BEGIN {txn}"),
            TraceKind::Join { txn, vote_yes } => write!(f, "JOIN {txn} {}", if *vote_yes { "yes" } else { "no" }),
            TraceKind::Send { to, msg } => write!(f, "SEND {to} {msg}"),
            TraceKind::Deliver { from, msg } => write!(f, "DELIVER {from} {msg}"),
            TraceKind::Store { req, op } => write!(f, "STORE #{req} {op}"),
            TraceKind::SlotWrite { req, log, txn, field, rec } => write!(f, "SLOT_WRITE #{req} {log} {txn} {field} {rec}"),
            TraceKind::StoreDone { req, reply } => match reply {
                Ok(state) => write!(f, "STORE_DONE #{req} {state}"),
                Err(e) => write!(f, "STORE_DONE #{req} ERR {e}"),
            },
            TraceKind::Decide { txn, decision } => write!(f, "DECIDE {txn} {decision}"),
            TraceKind::Reply { txn, decision } => write!(f, "REPLY {txn} {decision}"),
            TraceKind::Leave { txn } => write!(f, "LEAVE {txn}"),
            TraceKind::Crash => f.write_str("CRASH"),
            TraceKind::Recover => f.write_str("RECOVER"),
            TraceKind::StorageDown => f.write_str("STORAGE_DOWN"),
            TraceKind::StorageUp => f.write_str("STORAGE_UP"),
            TraceKind::Error { txn, detail } => write!(f, "ERROR {txn} {detail}"),
            TraceKind::End => f.write_str("END"),
        }
    }
}

fn req_id(s: &str) -> Result<u64, ParseError> {
    s.strip_prefix('#').and_then(|r| r.parse().ok()).ok_or_else(|| ParseError::new("request id", s))
}

fn field<'a>(s: &'a str, key: &'static str) -> Result<&'a str, ParseError> {
    s.strip_prefix(key).and_then(|r| r.strip_prefix('=')).ok_or_else(|| ParseError::new(key, s))
}

impl FromStr for TraceKind {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseError::new("trace event", s);
        let (head, rest) = s.split_once(' ').unwrap_or((s, ""));
        // Payloads that end in free text are split into at most n parts.
        let args = |n: usize| -> Vec<&str> { rest.splitn(n, ' ').collect() };
        let kind = match head {
            "TXN" => match args(4).as_slice() {
                [txn, coord, parts, ro] => {
                    let parts = field(parts, "parts")?;
                    TraceKind::Txn {
                        txn: txn.parse()?,
                        coordinator: field(coord, "coord")?.parse()?,
                        participants: if parts == "-" { Vec::new() } else { parts.split(',').map(str::parse).collect::<Result<_, _>>()? },
                        read_only: field(ro, "ro")? == "1",
                    }
                }
                _ => return Err(err()),
            },
            "BEGIN" => TraceKind::Begin { txn: rest.parse()? },
            "JOIN" => match args(2).as_slice() {
                [txn, v] => TraceKind::Join {
                    txn: txn.parse()?,
                    vote_yes: match *v {
                        "yes" => true,
                        "no" => false,
                        _ => return Err(err()),
                    },
                },
                _ => return Err(err()),
            },
            "SEND" | "DELIVER" => match args(2).as_slice() {
                [peer, msg] => {
                    let peer = peer.parse()?;
                    let msg = msg.parse()?;
                    if head == "SEND" {
                        TraceKind::Send { to: peer, msg }
                    } else {
                        TraceKind::Deliver { from: peer, msg }
                    }
                }
                _ => return Err(err()),
            },
            "STORE" => match args(2).as_slice() {
                [req, op] => TraceKind::Store { req: req_id(req)?, op: op.parse()? },
                _ => return Err(err()),
            },
            "SLOT_WRITE" => match args(5).as_slice() {
                [req, log, txn, fld, rec] => {
                    TraceKind::SlotWrite { req: req_id(req)?, log: log.parse()?, txn: txn.parse()?, field: fld.parse()?, rec: rec.parse()? }
                }
                _ => return Err(err()),
            },
            "STORE_DONE" => match args(2).as_slice() {
                [req, reply] => TraceKind::StoreDone {
                    req: req_id(req)?,
                    reply: match reply.strip_prefix("ERR ") {
                        Some(e) => Err(e.to_string()),
                        None => Ok(reply.parse()?),
                    },
                },
                _ => return Err(err()),
            },
            "DECIDE" | "REPLY" => match args(2).as_slice() {
                [txn, d] => {
                    let (txn, decision) = (txn.parse()?, d.parse()?);
                    if head == "DECIDE" {
                        TraceKind::Decide { txn, decision }
                    } else {
                        TraceKind::Reply { txn, decision }
                    }
                }
                _ => return Err(err()),
            },
            "LEAVE" => TraceKind::Leave { txn: rest.parse()? },
            "CRASH" => TraceKind::Crash,
            "RECOVER" => TraceKind::Recover,
            "STORAGE_DOWN" => TraceKind::StorageDown,
            "STORAGE_UP" => TraceKind::StorageUp,
            "ERROR" => match args(2).as_slice() {
                [txn, detail] => TraceKind::Error { txn: txn.parse()?, detail: detail.to_string() },
                _ => return Err(err()),
            },
            "END" => TraceKind::End,
            _ => return Err(err()),
        };
        Ok(kind)
    }
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.time, self.actor, self.kind)
    }
}

impl FromStr for TraceEvent {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.splitn(3, ' ');
        let (Some(time), Some(actor), Some(kind)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(ParseError::new("trace event", s));
        };
        Ok(TraceEvent {
            time: VirtualTime(time.parse().map_err(|_| ParseError::new("time", time))?),
            actor: actor.parse()?,
            kind: kind.parse()?,
        })
    }
}

impl fmt::Display for TraceHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "# cornus-trace {TRACE_VERSION} protocol={} ac5_bound_us={}", self.protocol, self.ac5_bound_us)
    }
}

impl FromStr for TraceHeader {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseError::new("trace header", s);
        let rest = s.strip_prefix("# cornus-trace ").and_then(|r| r.strip_prefix(TRACE_VERSION)).ok_or_else(err)?;
        let parts: Vec<&str> = rest.split_whitespace().collect();
        match parts.as_slice() {
            [p, b] => Ok(TraceHeader {
                protocol: field(p, "protocol")?.parse()?,
                ac5_bound_us: field(b, "ac5_bound_us")?.parse().map_err(|_| err())?,
            }),
            _ => Err(err()),
        }
    }
}

impl fmt::Display for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.header)?;
        for e in &self.events {
            writeln!(f, "{e}")?;
        }
        Ok(())
    }
}

impl FromStr for Trace {
    type Err = TraceParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut lines = s.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let bad =
            |line: usize, text: &str, e: ParseError| TraceParseError { line: line + 1, text: text.to_string(), reason: e.to_string() };
        let (n, first) = lines.next().ok_or(TraceParseError { line: 1, text: String::new(), reason: "missing header".into() })?;
        let header = first.parse().map_err(|e| bad(n, first, e))?;
        let events = lines.map(|(n, l)| l.parse().map_err(|e| bad(n, l, e))).collect::<Result<_, _>>()?;
        Ok(Trace { header, events })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::message::Vote;

    #[test]
    fn every_kind_round_trips() {
        let t = TxnId::new(NodeId(0), 1);
        let n1 = NodeId(1);
        let kinds = vec![
            TraceKind::Txn { txn: t, coordinator: NodeId(0), participants: vec![n1, NodeId(2)], read_only: false },
            TraceKind::Begin { txn: t },
            TraceKind::Join { txn: t, vote_yes: false },
            TraceKind::Send { to: n1, msg: Message::VoteReq { txn: t, participants: vec![n1] } },
            TraceKind::Deliver { from: n1, msg: Message::VoteResp { txn: t, vote: Vote::Yes } },
            TraceKind::Store { req: 4, op: StorageOp::log_once(LogId::participant(n1), t, RecordType::Abort) },
            TraceKind::SlotWrite {
                req: 4,
                log: LogId::coordinator(NodeId(0)),
                txn: t,
                field: SlotField::Decision,
                rec: RecordType::Commit,
            },
            TraceKind::StoreDone { req: 4, reply: Ok(LogState::VoteYes) },
            TraceKind::StoreDone { req: 5, reply: Err("storage unavailable: down".into()) },
            TraceKind::Decide { txn: t, decision: Decision::Abort },
            TraceKind::Reply { txn: t, decision: Decision::Commit },
            TraceKind::Leave { txn: t },
            TraceKind::Crash,
            TraceKind::Recover,
            TraceKind::StorageDown,
            TraceKind::StorageUp,
            TraceKind::Error { txn: t, detail: "illegal transition on log 1".into() },
            TraceKind::End,
        ];
        let mut trace = Trace::new(TraceHeader { protocol: ProtocolKind::Cornus, ac5_bound_us: 1234 });
        for (i, k) in kinds.into_iter().enumerate() {
            trace.push(VirtualTime(i as u64 * 10), Actor::Node(n1), k);
        }
        trace.push(VirtualTime(999), Actor::Sim, TraceKind::End);
        let text = trace.to_text();
        let back = Trace::parse(&text).unwrap();
        assert_eq!(back, trace);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn malformed_line_reports_position() {
        let text = "# cornus-trace v1 protocol=2pc ac5_bound_us=0\n0 sim END\n5 n1 BOGUS\n";
        let err = Trace::parse(text).unwrap_err();
        assert_eq!(err.line, 3);
    }
}
