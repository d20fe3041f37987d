//! Messages exchanged between compute nodes.
//!
//! The wire form is a single line of space-separated tokens prefixed with a
//! version tag, e.g. `v1 VOTE-REQ t0.3 n1,n2`. Encoding is deterministic so
//! traces can be replayed and compared byte for byte.

use std::fmt;
use std::str::FromStr;

use crate::types::{Access, Decision, NodeId, ParseError, TxnId};

pub const WIRE_VERSION: &str = "v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Vote {
    Yes,
    Abort,
    /// Baseline 2PC only: the participant only read and left the protocol.
    ReadOnly,
}

/// Answer to a cooperative-termination query.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PeerOutcome {
    Commit,
    Abort,
    Uncertain,
}

impl From<Decision> for PeerOutcome {
    fn from(d: Decision) -> Self {
        match d {
            Decision::Commit => PeerOutcome::Commit,
            Decision::Abort => PeerOutcome::Abort,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageKind {
    VoteReq,
    VoteResp,
    Decision,
    DecisionReq,
    DecisionResp,
    ExecReq,
    ExecResp,
    Release,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    VoteReq {
        txn: TxnId,
        participants: Vec<NodeId>,
    },
    VoteResp {
        txn: TxnId,
        vote: Vote,
    },
    Decision {
        txn: TxnId,
        decision: Decision,
    },
    DecisionReq {
        txn: TxnId,
    },
    DecisionResp {
        txn: TxnId,
        outcome: PeerOutcome,
    },
    /// Execution phase: one batched request per partition.
    ExecReq {
        txn: TxnId,
        accesses: Vec<Access>,
    },
    ExecResp {
        txn: TxnId,
        granted: bool,
    },
    /// Drop the transaction and its locks without running the commit protocol.
    Release {
        txn: TxnId,
    },
}

impl Message {
    pub fn txn(&self) -> TxnId {
        match self {
            Message::VoteReq { txn, .. }
            | Message::VoteResp { txn, .. }
            | Message::Decision { txn, .. }
            | Message::DecisionReq { txn }
            | Message::DecisionResp { txn, .. }
            | Message::ExecReq { txn, .. }
            | Message::ExecResp { txn, .. }
            | Message::Release { txn } => *txn,
        }
    }

    pub fn kind(&self) -> MessageKind {
        match self {
            Message::VoteReq { .. } => MessageKind::VoteReq,
            Message::VoteResp { .. } => MessageKind::VoteResp,
            Message::Decision { .. } => MessageKind::Decision,
            Message::DecisionReq { .. } => MessageKind::DecisionReq,
            Message::DecisionResp { .. } => MessageKind::DecisionResp,
            Message::ExecReq { .. } => MessageKind::ExecReq,
            Message::ExecResp { .. } => MessageKind::ExecResp,
            Message::Release { .. } => MessageKind::Release,
        }
    }

    /// Versioned wire form.
    pub fn encode(&self) -> String {
        format!("{WIRE_VERSION} {self}")
    }

    pub fn decode(s: &str) -> Result<Message, ParseError> {
        let body = s.strip_prefix(WIRE_VERSION).and_then(|r| r.strip_prefix(' ')).ok_or_else(|| ParseError::new("message version", s))?;
        body.parse()
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MessageKind::VoteReq => "VOTE-REQ",
            MessageKind::VoteResp => "VOTE-RESP",
            MessageKind::Decision => "DECISION",
            MessageKind::DecisionReq => "DECISION-REQ",
            MessageKind::DecisionResp => "DECISION-RESP",
            MessageKind::ExecReq => "EXEC-REQ",
            MessageKind::ExecResp => "EXEC-RESP",
            MessageKind::Release => "RELEASE",
        })
    }
}

impl FromStr for MessageKind {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "VOTE-REQ" => MessageKind::VoteReq,
            "VOTE-RESP" => MessageKind::VoteResp,
            "DECISION" => MessageKind::Decision,
            "DECISION-REQ" => MessageKind::DecisionReq,
            "DECISION-RESP" => MessageKind::DecisionResp,
            "EXEC-REQ" => MessageKind::ExecReq,
            "EXEC-RESP" => MessageKind::ExecResp,
            "RELEASE" => MessageKind::Release,
            _ => return Err(ParseError::new("message kind", s)),
        })
    }
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    if items.is_empty() {
        return "-".into();
    }
    items.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}

fn split<T: FromStr<Err = ParseError>>(s: &str) -> Result<Vec<T>, ParseError> {
    if s == "-" {
        return Ok(Vec::new());
    }
    s.split(',').map(str::parse).collect()
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = self.kind();
        match self {
            Message::VoteReq { txn, participants } => write!(f, "{kind} {txn} {}", join(participants)),
            Message::VoteResp { txn, vote } => {
                let v = match vote {
                    Vote::Yes => "YES",
                    Vote::Abort => "ABORT",
                    Vote::ReadOnly => "READ-ONLY",
                };
                write!(f, "{kind} {txn} {v}")
            }
            Message::Decision { txn, decision } => write!(f, "{kind} {txn} {decision}"),
            Message::DecisionReq { txn } | Message::Release { txn } => write!(f, "{kind} {txn}"),
            Message::DecisionResp { txn, outcome } => {
                let o = match outcome {
                    PeerOutcome::Commit => "COMMIT",
                    PeerOutcome::Abort => "ABORT",
                    PeerOutcome::Uncertain => "UNCERTAIN",
                };
                write!(f, "{kind} {txn} {o}")
            }
            Message::ExecReq { txn, accesses } => write!(f, "{kind} {txn} {}", join(accesses)),
            Message::ExecResp { txn, granted } => {
                write!(f, "{kind} {txn} {}", if *granted { "GRANTED" } else { "NOWAIT-ABORT" })
            }
        }
    }
}

impl FromStr for Message {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseError::new("message", s);
        let parts: Vec<&str> = s.split(' ').collect();
        let msg = match parts.as_slice() {
            ["VOTE-REQ", txn, ps] => Message::VoteReq { txn: txn.parse()?, participants: split(ps)? },
            ["VOTE-RESP", txn, v] => Message::VoteResp {
                txn: txn.parse()?,
                vote: match *v {
                    "YES" => Vote::Yes,
                    "ABORT" => Vote::Abort,
                    "READ-ONLY" => Vote::ReadOnly,
                    _ => return Err(err()),
                },
            },
            ["DECISION", txn, d] => Message::Decision { txn: txn.parse()?, decision: d.parse()? },
            ["DECISION-REQ", txn] => Message::DecisionReq { txn: txn.parse()? },
            ["DECISION-RESP", txn, o] => Message::DecisionResp {
                txn: txn.parse()?,
                outcome: match *o {
                    "COMMIT" => PeerOutcome::Commit,
                    "ABORT" => PeerOutcome::Abort,
                    "UNCERTAIN" => PeerOutcome::Uncertain,
                    _ => return Err(err()),
                },
            },
            ["EXEC-REQ", txn, acc] => Message::ExecReq { txn: txn.parse()?, accesses: split(acc)? },
            ["EXEC-RESP", txn, g] => Message::ExecResp {
                txn: txn.parse()?,
                granted: match *g {
                    "GRANTED" => true,
                    "NOWAIT-ABORT" => false,
                    _ => return Err(err()),
                },
            },
            ["RELEASE", txn] => Message::Release { txn: txn.parse()? },
            _ => return Err(err()),
        };
        Ok(msg)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::types::AccessMode;

    fn txn() -> impl Strategy<Value = TxnId> {
        (0u32..8, 0u64..1000).prop_map(|(n, s)| TxnId::new(NodeId(n), s))
    }

    fn message() -> impl Strategy<Value = Message> {
        let decision = prop_oneof![Just(Decision::Commit), Just(Decision::Abort)];
        let access =
            (any::<u64>(), any::<bool>()).prop_map(|(key, w)| Access { key, mode: if w { AccessMode::Write } else { AccessMode::Read } });
        prop_oneof![
            (txn(), prop::collection::vec(0u32..16, 0..5))
                .prop_map(|(txn, ps)| Message::VoteReq { txn, participants: ps.into_iter().map(NodeId).collect() }),
            (txn(), prop_oneof![Just(Vote::Yes), Just(Vote::Abort), Just(Vote::ReadOnly)])
                .prop_map(|(txn, vote)| Message::VoteResp { txn, vote }),
            (txn(), decision).prop_map(|(txn, decision)| Message::Decision { txn, decision }),
            txn().prop_map(|txn| Message::DecisionReq { txn }),
            (txn(), prop_oneof![Just(PeerOutcome::Commit), Just(PeerOutcome::Abort), Just(PeerOutcome::Uncertain)])
                .prop_map(|(txn, outcome)| Message::DecisionResp { txn, outcome }),
            (txn(), prop::collection::vec(access, 0..6)).prop_map(|(txn, accesses)| Message::ExecReq { txn, accesses }),
            (txn(), any::<bool>()).prop_map(|(txn, granted)| Message::ExecResp { txn, granted }),
            txn().prop_map(|txn| Message::Release { txn }),
        ]
    }

    proptest! {
        #[test]
        fn wire_round_trip(msg in message()) {
            let wire = msg.encode();
            prop_assert_eq!(Message::decode(&wire).unwrap(), msg.clone());
            prop_assert_eq!(Message::decode(&wire).unwrap().encode(), wire);
        }
    }

    #[test]
    fn version_is_required() {
        assert!(Message::decode("VOTE-REQ t0.1 n1").is_err());
        assert!(Message::decode("v2 VOTE-REQ t0.1 n1").is_err());
        assert_eq!(
            Message::decode("v1 VOTE-REQ t0.1 n1,n2").unwrap(),
            Message::VoteReq { txn: TxnId::new(NodeId(0), 1), participants: vec![NodeId(1), NodeId(2)] }
        );
    }
}
