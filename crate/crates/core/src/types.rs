//! Domain types shared by the protocols, the storage layer, the simulator
//! and the checker.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Virtual time in microseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VirtualTime(pub u64);

impl VirtualTime {
    pub const ZERO: VirtualTime = VirtualTime(0);

    pub fn as_micros(self) -> u64 {
        self.0
    }

    pub fn after(self, us: u64) -> VirtualTime {
        VirtualTime(self.0.saturating_add(us))
    }

    pub fn since(self, earlier: VirtualTime) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

impl fmt::Display for VirtualTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("cannot parse {what} from {input:?}")]
pub struct ParseError {
    pub what: &'static str,
    pub input: String,
}

impl ParseError {
    pub(crate) fn new(what: &'static str, input: &str) -> Self {
        ParseError { what, input: input.to_string() }
    }
}

/// A compute node. Every node owns one data partition and one participant log.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

impl FromStr for NodeId {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.strip_prefix('n').and_then(|n| n.parse().ok()).map(NodeId).ok_or_else(|| ParseError::new("node id", s))
    }
}

/// Transaction identifier: the coordinating node plus a per-coordinator
/// sequence number.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TxnId {
    pub coordinator: NodeId,
    pub seq: u64,
}

impl TxnId {
    pub fn new(coordinator: NodeId, seq: u64) -> Self {
        TxnId { coordinator, seq }
    }
}

impl fmt::Display for TxnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}.{}", self.coordinator.0, self.seq)
    }
}

impl FromStr for TxnId {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseError::new("txn id", s);
        let (node, seq) = s.strip_prefix('t').and_then(|r| r.split_once('.')).ok_or_else(err)?;
        Ok(TxnId { coordinator: NodeId(node.parse().map_err(|_| err())?), seq: seq.parse().map_err(|_| err())? })
    }
}

/// Which kind of log a slot lives in. Participant logs hold votes and
/// decisions; coordinator logs exist only for baseline 2PC decision records.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LogKind {
    Participant,
    Coordinator,
}

/// Addresses one log namespace in the storage service.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LogId {
    pub owner: NodeId,
    pub kind: LogKind,
}

impl LogId {
    pub fn participant(owner: NodeId) -> Self {
        LogId { owner, kind: LogKind::Participant }
    }

    pub fn coordinator(owner: NodeId) -> Self {
        LogId { owner, kind: LogKind::Coordinator }
    }
}

impl fmt::Display for LogId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            LogKind::Participant => write!(f, "{}", self.owner.0),
            LogKind::Coordinator => write!(f, "c{}", self.owner.0),
        }
    }
}

impl FromStr for LogId {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseError::new("log id", s);
        match s.strip_prefix('c') {
            Some(rest) => Ok(LogId::coordinator(NodeId(rest.parse().map_err(|_| err())?))),
            None => Ok(LogId::participant(NodeId(s.parse().map_err(|_| err())?))),
        }
    }
}

/// Log record types. A "no" vote is materialized as `Abort`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RecordType {
    VoteYes,
    Abort,
    Commit,
}

impl RecordType {
    pub fn is_vote(self) -> bool {
        matches!(self, RecordType::VoteYes | RecordType::Abort)
    }
}

impl fmt::Display for RecordType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecordType::VoteYes => "VOTE_YES",
            RecordType::Abort => "ABORT",
            RecordType::Commit => "COMMIT",
        })
    }
}

impl FromStr for RecordType {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "VOTE_YES" => Ok(RecordType::VoteYes),
            "ABORT" => Ok(RecordType::Abort),
            "COMMIT" => Ok(RecordType::Commit),
            _ => Err(ParseError::new("record type", s)),
        }
    }
}

/// Derived view of a slot.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LogState {
    #[default]
    None,
    VoteYes,
    Committed,
    Aborted,
}

impl LogState {
    /// Wire encoding used by the Redis state keys: absent/0 = NONE.
    pub fn code(self) -> i64 {
        match self {
            LogState::None => 0,
            LogState::VoteYes => 1,
            LogState::Aborted => 2,
            LogState::Committed => 3,
        }
    }

    pub fn from_code(code: i64) -> Option<LogState> {
        match code {
            0 => Some(LogState::None),
            1 => Some(LogState::VoteYes),
            2 => Some(LogState::Aborted),
            3 => Some(LogState::Committed),
            _ => None,
        }
    }

    pub fn decision(self) -> Option<Decision> {
        match self {
            LogState::Committed => Some(Decision::Commit),
            LogState::Aborted => Some(Decision::Abort),
            _ => None,
        }
    }
}

impl From<RecordType> for LogState {
    fn from(rec: RecordType) -> Self {
        match rec {
            RecordType::VoteYes => LogState::VoteYes,
            RecordType::Abort => LogState::Aborted,
            RecordType::Commit => LogState::Committed,
        }
    }
}

impl fmt::Display for LogState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LogState::None => "NONE",
            LogState::VoteYes => "VOTE_YES",
            LogState::Committed => "COMMITTED",
            LogState::Aborted => "ABORTED",
        })
    }
}

impl FromStr for LogState {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "NONE" => Ok(LogState::None),
            "VOTE_YES" => Ok(LogState::VoteYes),
            "COMMITTED" => Ok(LogState::Committed),
            "ABORTED" => Ok(LogState::Aborted),
            _ => Err(ParseError::new("log state", s)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Decision {
    Commit,
    Abort,
}

impl Decision {
    pub fn record(self) -> RecordType {
        match self {
            Decision::Commit => RecordType::Commit,
            Decision::Abort => RecordType::Abort,
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Commit => "COMMIT",
            Decision::Abort => "ABORT",
        })
    }
}

impl FromStr for Decision {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "COMMIT" => Ok(Decision::Commit),
            "ABORT" => Ok(Decision::Abort),
            _ => Err(ParseError::new("decision", s)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GlobalDecision {
    Commit,
    Abort,
    Undetermined,
}

impl GlobalDecision {
    pub fn decision(self) -> Option<Decision> {
        match self {
            GlobalDecision::Commit => Some(Decision::Commit),
            GlobalDecision::Abort => Some(Decision::Abort),
            GlobalDecision::Undetermined => None,
        }
    }
}

impl From<Decision> for GlobalDecision {
    fn from(d: Decision) -> Self {
        match d {
            Decision::Commit => GlobalDecision::Commit,
            Decision::Abort => GlobalDecision::Abort,
        }
    }
}

impl fmt::Display for GlobalDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GlobalDecision::Commit => "COMMIT",
            GlobalDecision::Abort => "ABORT",
            GlobalDecision::Undetermined => "UNDETERMINED",
        })
    }
}

/// One stored record together with who wrote it and when.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Record {
    pub ty: RecordType,
    pub writer: NodeId,
    pub time: VirtualTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SlotField {
    Vote,
    Decision,
}

impl fmt::Display for SlotField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SlotField::Vote => "vote",
            SlotField::Decision => "decision",
        })
    }
}

impl FromStr for SlotField {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vote" => Ok(SlotField::Vote),
            "decision" => Ok(SlotField::Decision),
            _ => Err(ParseError::new("slot field", s)),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SlotError {
    #[error("{0} is not a vote record")]
    NotAVote(RecordType),
    #[error("illegal transition: {rec} over {existing}")]
    IllegalTransition { existing: LogState, rec: RecordType },
}

/// Per-(log, transaction) state: a write-once vote and a write-once decision.
///
/// All mutation goes through [`TxnLogSlot::log_once`] and [`TxnLogSlot::log`],
/// which keep the invariants: `decision = COMMIT` implies a `VOTE_YES` vote in
/// a participant log, and an `ABORT` vote never carries a `COMMIT` decision.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct TxnLogSlot {
    vote: Option<Record>,
    decision: Option<Record>,
}

impl TxnLogSlot {
    pub fn vote(&self) -> Option<Record> {
        self.vote
    }

    pub fn decision(&self) -> Option<Record> {
        self.decision
    }

    pub fn is_empty(&self) -> bool {
        self.vote.is_none() && self.decision.is_none()
    }

    pub fn state(&self) -> LogState {
        derive_state(self)
    }

    pub fn has_abort_record(&self) -> bool {
        self.vote.map(|r| r.ty) == Some(RecordType::Abort) || self.decision.map(|r| r.ty) == Some(RecordType::Abort)
    }

    /// Conditional write: fills the vote field only if the slot holds no
    /// record at all. Returns the post-operation state and the field written.
    pub fn log_once(&mut self, rec: Record) -> Result<(LogState, Option<SlotField>), SlotError> {
        if !rec.ty.is_vote() {
            return Err(SlotError::NotAVote(rec.ty));
        }
        if self.is_empty() {
            self.vote = Some(rec);
            return Ok((self.state(), Some(SlotField::Vote)));
        }
        Ok((self.state(), None))
    }

    /// Unconditional append. Votes fill the vote field; a decision fills the
    /// decision field. An `ABORT` on an empty participant slot is a vote.
    /// Identical repeats are no-ops.
    pub fn log(&mut self, rec: Record, kind: LogKind) -> Result<Option<SlotField>, SlotError> {
        let illegal = |slot: &TxnLogSlot| SlotError::IllegalTransition { existing: slot.state(), rec: rec.ty };
        if kind == LogKind::Coordinator {
            if rec.ty == RecordType::VoteYes {
                return Err(illegal(self));
            }
            return match self.decision {
                None => {
                    self.decision = Some(rec);
                    Ok(Some(SlotField::Decision))
                }
                Some(d) if d.ty == rec.ty => Ok(None),
                Some(_) => Err(illegal(self)),
            };
        }
        let vote = self.vote.map(|r| r.ty);
        let decision = self.decision.map(|r| r.ty);
        match (rec.ty, vote, decision) {
            (RecordType::VoteYes, None, None) => {
                self.vote = Some(rec);
                Ok(Some(SlotField::Vote))
            }
            (RecordType::VoteYes, Some(RecordType::VoteYes), _) => Ok(None),
            (RecordType::VoteYes, _, _) => Err(illegal(self)),

            (RecordType::Abort, None, None) => {
                self.vote = Some(rec);
                Ok(Some(SlotField::Vote))
            }
            (RecordType::Abort, Some(RecordType::Abort), _) => Ok(None),
            (RecordType::Abort, Some(RecordType::VoteYes), None) => {
                self.decision = Some(rec);
                Ok(Some(SlotField::Decision))
            }
            (RecordType::Abort, Some(RecordType::VoteYes), Some(RecordType::Abort)) => Ok(None),
            (RecordType::Abort, _, _) => Err(illegal(self)),

            (RecordType::Commit, Some(RecordType::VoteYes), None) => {
                self.decision = Some(rec);
                Ok(Some(SlotField::Decision))
            }
            (RecordType::Commit, Some(RecordType::VoteYes), Some(RecordType::Commit)) => Ok(None),
            (RecordType::Commit, _, _) => Err(illegal(self)),
        }
    }

    /// Writes a record into a specific field, as observed in a trace. Used by
    /// the checker to rebuild slot histories; rejects a second write to a field.
    pub fn replay_write(&mut self, field: SlotField, rec: Record) -> Result<(), SlotField> {
        let target = match field {
            SlotField::Vote => &mut self.vote,
            SlotField::Decision => &mut self.decision,
        };
        if target.is_some() {
            return Err(field);
        }
        *target = Some(rec);
        Ok(())
    }
}

/// Decision record dominates the vote record, which dominates NONE.
pub fn derive_state(slot: &TxnLogSlot) -> LogState {
    match (slot.decision, slot.vote) {
        (Some(d), _) => LogState::from(d.ty),
        (None, Some(v)) => LogState::from(v.ty),
        (None, None) => LogState::None,
    }
}

/// Global decision over the participant slots of one transaction: ABORT as
/// soon as any slot carries an ABORT record, COMMIT when every slot holds a
/// `VOTE_YES` vote, otherwise undetermined.
pub fn global_decision<'a>(slots: impl IntoIterator<Item = &'a TxnLogSlot>) -> GlobalDecision {
    let mut all_yes = true;
    for slot in slots {
        if slot.has_abort_record() {
            return GlobalDecision::Abort;
        }
        if slot.vote.map(|r| r.ty) != Some(RecordType::VoteYes) {
            all_yes = false;
        }
    }
    if all_yes {
        GlobalDecision::Commit
    } else {
        GlobalDecision::Undetermined
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AccessMode {
    Read,
    Write,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Access {
    pub key: u64,
    pub mode: AccessMode,
}

impl Access {
    pub fn read(key: u64) -> Self {
        Access { key, mode: AccessMode::Read }
    }

    pub fn write(key: u64) -> Self {
        Access { key, mode: AccessMode::Write }
    }
}

impl fmt::Display for Access {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mode {
            AccessMode::Read => write!(f, "r{}", self.key),
            AccessMode::Write => write!(f, "w{}", self.key),
        }
    }
}

impl FromStr for Access {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseError::new("access", s);
        let mode = match s.as_bytes().first() {
            Some(b'r') => AccessMode::Read,
            Some(b'w') => AccessMode::Write,
            _ => return Err(err()),
        };
        Ok(Access { key: s[1..].parse().map_err(|_| err())?, mode })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TxnError {
    #[error("transaction {0} has no participants")]
    NoParticipants(TxnId),
}

/// A transaction ready to commit: its coordinator, its participants and
/// what each participant accessed during execution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transaction {
    pub id: TxnId,
    pub coordinator: NodeId,
    pub participants: BTreeSet<NodeId>,
    pub accesses: BTreeMap<NodeId, Vec<Access>>,
    pub read_only: bool,
}

impl Transaction {
    /// Participants are the partitions that appear in `accesses`.
    pub fn new(id: TxnId, accesses: BTreeMap<NodeId, Vec<Access>>) -> Result<Self, TxnError> {
        if accesses.is_empty() {
            return Err(TxnError::NoParticipants(id));
        }
        let read_only = accesses.values().flatten().all(|a| a.mode == AccessMode::Read);
        Ok(Transaction { id, coordinator: id.coordinator, participants: accesses.keys().copied().collect(), accesses, read_only })
    }

    pub fn is_distributed(&self) -> bool {
        self.participants.len() > 1
    }

    /// True when `node` only read during execution.
    pub fn is_read_only_at(&self, node: NodeId) -> bool {
        self.accesses.get(&node).map(|a| a.iter().all(|x| x.mode == AccessMode::Read)).unwrap_or(true)
    }
}
