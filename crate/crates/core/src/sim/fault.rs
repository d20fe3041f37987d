//! Crash and outage injection.
//!
//! Crashes happen at message and storage-operation boundaries. A [`Trigger`]
//! names such a boundary; a [`CrashPoint`] names a protocol step in terms of
//! triggers, one per failure case a commit protocol has to survive.

use std::fmt;
use std::str::FromStr;

use crate::message::MessageKind;
use crate::types::{NodeId, ParseError, VirtualTime};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Trigger {
    /// The node is down from the beginning of the run.
    AtStart,
    AtTime(VirtualTime),
    /// Right after the node sends its `count`-th message of `kind`; the rest
    /// of that handler's effects are lost.
    AfterSend {
        kind: MessageKind,
        count: u32,
    },
    /// Instead of receiving its `count`-th message of `kind`.
    BeforeDeliver {
        kind: MessageKind,
        count: u32,
    },
    /// Right after issuing its `count`-th storage request. Requests that have
    /// not reached storage die with the node.
    AfterStorageIssue {
        count: u32,
    },
    /// Instead of receiving the reply to its `count`-th storage request; the
    /// request itself took effect.
    BeforeStorageAck {
        count: u32,
    },
    /// Right after answering a transaction's caller.
    AfterReply,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Fault {
    pub node: NodeId,
    pub trigger: Trigger,
    /// Restart this long after the crash; `None` means never.
    pub recover_after_us: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StorageOutage {
    pub at: VirtualTime,
    /// `None` means the storage service never comes back.
    pub until: Option<VirtualTime>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FaultPlan {
    pub crashes: Vec<Fault>,
    pub outages: Vec<StorageOutage>,
}

impl FaultPlan {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn crash(mut self, fault: Fault) -> Self {
        self.crashes.push(fault);
        self
    }

    pub fn outage(mut self, outage: StorageOutage) -> Self {
        self.outages.push(outage);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.crashes.is_empty() && self.outages.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CoordinatorCrash {
    BeforeStart,
    /// After `k` of the vote requests went out, `0 < k < n`.
    AfterSomeVoteRequests(u32),
    AfterAllVoteRequests,
    /// Every participant voted but the coordinator never sees the last vote.
    BeforeLastVote,
    /// Baseline 2PC: the decision record is durable, nothing was sent.
    AfterDecisionLogged,
    /// The caller has the decision, no participant has it.
    AfterReply,
    AfterSomeDecisions(u32),
    AfterAllDecisions,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParticipantCrash {
    BeforeVoteRequest,
    BeforeLoggingVote,
    AfterLoggingVote,
    AfterReplying,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CrashPoint {
    Coordinator(CoordinatorCrash),
    Participant(NodeId, ParticipantCrash),
}

/// Which failure case a crash point belongs to, for reporting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FailureCase {
    CoordinatorBeforeStart,
    CoordinatorAfterSomeVoteRequests,
    CoordinatorBeforeAnyDecision,
    CoordinatorAfterSomeDecisions,
    CoordinatorAfterAllDecisions,
    ParticipantBeforeVoteRequest,
    ParticipantBeforeLoggingVote,
    ParticipantAfterLoggingVote,
    ParticipantAfterReplying,
}

impl FailureCase {
    pub const ALL: [FailureCase; 9] = [
        FailureCase::CoordinatorBeforeStart,
        FailureCase::CoordinatorAfterSomeVoteRequests,
        FailureCase::CoordinatorBeforeAnyDecision,
        FailureCase::CoordinatorAfterSomeDecisions,
        FailureCase::CoordinatorAfterAllDecisions,
        FailureCase::ParticipantBeforeVoteRequest,
        FailureCase::ParticipantBeforeLoggingVote,
        FailureCase::ParticipantAfterLoggingVote,
        FailureCase::ParticipantAfterReplying,
    ];

    pub fn label(self) -> &'static str {
        match self {
            FailureCase::CoordinatorBeforeStart => "coordinator: before the protocol starts",
            FailureCase::CoordinatorAfterSomeVoteRequests => "coordinator: after some vote requests",
            FailureCase::CoordinatorBeforeAnyDecision => "coordinator: after all vote requests, before any decision",
            FailureCase::CoordinatorAfterSomeDecisions => "coordinator: after some decisions",
            FailureCase::CoordinatorAfterAllDecisions => "coordinator: after all decisions",
            FailureCase::ParticipantBeforeVoteRequest => "participant: before the vote request",
            FailureCase::ParticipantBeforeLoggingVote => "participant: before logging the vote",
            FailureCase::ParticipantAfterLoggingVote => "participant: after logging, before replying",
            FailureCase::ParticipantAfterReplying => "participant: after replying",
        }
    }
}

impl CrashPoint {
    /// Every coordinator crash point for a transaction with `n` participants.
    pub fn coordinator_points(n: u32) -> Vec<CrashPoint> {
        use CoordinatorCrash::*;
        let mut v = vec![BeforeStart];
        v.extend((1..n).map(AfterSomeVoteRequests));
        v.extend([AfterAllVoteRequests, BeforeLastVote, AfterDecisionLogged, AfterReply]);
        v.extend((1..n).map(AfterSomeDecisions));
        v.push(AfterAllDecisions);
        v.into_iter().map(CrashPoint::Coordinator).collect()
    }

    pub fn participant_points(p: NodeId) -> Vec<CrashPoint> {
        use ParticipantCrash::*;
        [BeforeVoteRequest, BeforeLoggingVote, AfterLoggingVote, AfterReplying].into_iter().map(|c| CrashPoint::Participant(p, c)).collect()
    }

    pub fn case(self) -> FailureCase {
        use CoordinatorCrash as C;
        use ParticipantCrash as P;
        match self {
            CrashPoint::Coordinator(c) => match c {
                C::BeforeStart => FailureCase::CoordinatorBeforeStart,
                C::AfterSomeVoteRequests(_) => FailureCase::CoordinatorAfterSomeVoteRequests,
                C::AfterAllVoteRequests | C::BeforeLastVote | C::AfterDecisionLogged | C::AfterReply => {
                    FailureCase::CoordinatorBeforeAnyDecision
                }
                C::AfterSomeDecisions(_) => FailureCase::CoordinatorAfterSomeDecisions,
                C::AfterAllDecisions => FailureCase::CoordinatorAfterAllDecisions,
            },
            CrashPoint::Participant(_, p) => match p {
                P::BeforeVoteRequest => FailureCase::ParticipantBeforeVoteRequest,
                P::BeforeLoggingVote => FailureCase::ParticipantBeforeLoggingVote,
                P::AfterLoggingVote => FailureCase::ParticipantAfterLoggingVote,
                P::AfterReplying => FailureCase::ParticipantAfterReplying,
            },
        }
    }

    /// The concrete fault for a transaction coordinated by `coordinator` with
    /// `n` participants.
    pub fn fault(self, coordinator: NodeId, n: u32, recover_after_us: Option<u64>) -> Fault {
        use CoordinatorCrash as C;
        use ParticipantCrash as P;
        let (node, trigger) = match self {
            CrashPoint::Coordinator(c) => {
                let t = match c {
                    C::BeforeStart => Trigger::AtStart,
                    C::AfterSomeVoteRequests(k) => Trigger::AfterSend { kind: MessageKind::VoteReq, count: k },
                    C::AfterAllVoteRequests => Trigger::AfterSend { kind: MessageKind::VoteReq, count: n },
                    C::BeforeLastVote => Trigger::BeforeDeliver { kind: MessageKind::VoteResp, count: n },
                    C::AfterDecisionLogged => Trigger::BeforeStorageAck { count: 1 },
                    C::AfterReply => Trigger::AfterReply,
                    C::AfterSomeDecisions(k) => Trigger::AfterSend { kind: MessageKind::Decision, count: k },
                    C::AfterAllDecisions => Trigger::AfterSend { kind: MessageKind::Decision, count: n },
                };
                (coordinator, t)
            }
            CrashPoint::Participant(p, c) => {
                let t = match c {
                    P::BeforeVoteRequest => Trigger::BeforeDeliver { kind: MessageKind::VoteReq, count: 1 },
                    P::BeforeLoggingVote => Trigger::AfterStorageIssue { count: 1 },
                    P::AfterLoggingVote => Trigger::BeforeStorageAck { count: 1 },
                    P::AfterReplying => Trigger::AfterSend { kind: MessageKind::VoteResp, count: 1 },
                };
                (p, t)
            }
        };
        Fault { node, trigger, recover_after_us }
    }
}

impl fmt::Display for CrashPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use CoordinatorCrash as C;
        use ParticipantCrash as P;
        match self {
            CrashPoint::Coordinator(c) => match c {
                C::BeforeStart => f.write_str("coord/before-start"),
                C::AfterSomeVoteRequests(k) => write!(f, "coord/after-vote-reqs:{k}"),
                C::AfterAllVoteRequests => f.write_str("coord/after-all-vote-reqs"),
                C::BeforeLastVote => f.write_str("coord/before-last-vote"),
                C::AfterDecisionLogged => f.write_str("coord/after-decision-logged"),
                C::AfterReply => f.write_str("coord/after-reply"),
                C::AfterSomeDecisions(k) => write!(f, "coord/after-decisions:{k}"),
                C::AfterAllDecisions => f.write_str("coord/after-all-decisions"),
            },
            CrashPoint::Participant(p, c) => {
                let s = match c {
                    P::BeforeVoteRequest => "before-vote-req",
                    P::BeforeLoggingVote => "before-logging-vote",
                    P::AfterLoggingVote => "after-logging-vote",
                    P::AfterReplying => "after-replying",
                };
                write!(f, "{p}/{s}")
            }
        }
    }
}

impl fmt::Display for Trigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Trigger::AtStart => f.write_str("start"),
            Trigger::AtTime(t) => write!(f, "at:{t}"),
            Trigger::AfterSend { kind, count } => write!(f, "after-send:{kind}:{count}"),
            Trigger::BeforeDeliver { kind, count } => write!(f, "before-deliver:{kind}:{count}"),
            Trigger::AfterStorageIssue { count } => write!(f, "after-store:{count}"),
            Trigger::BeforeStorageAck { count } => write!(f, "before-ack:{count}"),
            Trigger::AfterReply => f.write_str("after-reply"),
        }
    }
}

impl FromStr for Trigger {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseError::new("crash trigger", s);
        let num = |x: &str| x.parse::<u32>().map_err(|_| err());
        let parts: Vec<&str> = s.split(':').collect();
        Ok(match parts.as_slice() {
            ["start"] => Trigger::AtStart,
            ["at", t] => Trigger::AtTime(VirtualTime(t.parse().map_err(|_| err())?)),
            ["after-send", k, c] => Trigger::AfterSend { kind: k.parse()?, count: num(c)? },
            ["before-deliver", k, c] => Trigger::BeforeDeliver { kind: k.parse()?, count: num(c)? },
            ["after-store", c] => Trigger::AfterStorageIssue { count: num(c)? },
            ["before-ack", c] => Trigger::BeforeStorageAck { count: num(c)? },
            ["after-reply"] => Trigger::AfterReply,
            _ => return Err(err()),
        })
    }
}

/// Text form, entries separated by `;`:
///
/// * `n0@after-send:VOTE-REQ:1` crashes n0, `+recover=500` restarts it 500 us later;
/// * `storage@down:5000` or `storage@down:5000:9000` takes storage down.
impl FromStr for FaultPlan {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut plan = FaultPlan::none();
        for entry in s.split(';').map(str::trim).filter(|e| !e.is_empty()) {
            let err = || ParseError::new("fault", entry);
            let (target, spec) = entry.split_once('@').ok_or_else(err)?;
            if target == "storage" {
                let parts: Vec<&str> = spec.split(':').collect();
                let t = |x: &str| x.parse::<u64>().map(VirtualTime).map_err(|_| err());
                let outage = match parts.as_slice() {
                    ["down", at] => StorageOutage { at: t(at)?, until: None },
                    ["down", at, until] => StorageOutage { at: t(at)?, until: Some(t(until)?) },
                    _ => return Err(err()),
                };
                plan.outages.push(outage);
                continue;
            }
            let (trigger, recover) = match spec.split_once('+') {
                Some((t, r)) => {
                    let us = r.strip_prefix("recover=").and_then(|x| x.parse().ok()).ok_or_else(err)?;
                    (t, Some(us))
                }
                None => (spec, None),
            };
            plan.crashes.push(Fault { node: target.parse()?, trigger: trigger.parse()?, recover_after_us: recover });
        }
        Ok(plan)
    }
}

impl fmt::Display for FaultPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut entries: Vec<String> = self
            .crashes
            .iter()
            .map(|c| match c.recover_after_us {
                Some(r) => format!("{}@{}+recover={r}", c.node, c.trigger),
                None => format!("{}@{}", c.node, c.trigger),
            })
            .collect();
        entries.extend(self.outages.iter().map(|o| match o.until {
            Some(u) => format!("storage@down:{}:{u}", o.at),
            None => format!("storage@down:{}", o.at),
        }));
        f.write_str(&entries.join(";"))
    }
}
