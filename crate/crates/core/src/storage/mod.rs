//! The disaggregated log-storage abstraction.
//!
//! Every participant log is addressable by every node, so a terminating node
//! can read or conditionally write any participant's transaction state. Two
//! operations carry the protocols:
//!
//! * [`LogStore::log`] appends a record unconditionally;
//! * [`LogStore::log_once`] writes a vote only if the slot holds no record yet
//!   and returns the state after the operation.
//!
//! [`MemoryStore`] backs simulation and model checking; [`RedisStore`] is the
//! live deployment backend.

mod latency;
mod memory;
mod redis;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use self::latency::{LatencyModelError, StorageLatencyModel};
pub use self::memory::MemoryStore;
pub use self::redis::{RedisConfig, RedisStore, LOG_ONCE_SCRIPT};

use crate::types::{LogId, LogState, NodeId, ParseError, RecordType, SlotError, TxnId, VirtualTime};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StorageError {
    #[error("storage unavailable: {0}")]
    Unavailable(String),
    #[error("illegal transition on log {log} for {txn}: {rec} over {existing}")]
    IllegalTransition { log: LogId, txn: TxnId, existing: LogState, rec: RecordType },
    #[error("log_once only accepts vote records, got {0}")]
    NotAVote(RecordType),
    #[error("backend returned an unknown state code {0}")]
    BadStateCode(i64),
}

impl StorageError {
    pub(crate) fn from_slot(log: LogId, txn: TxnId, err: SlotError) -> Self {
        match err {
            SlotError::NotAVote(rec) => StorageError::NotAVote(rec),
            SlotError::IllegalTransition { existing, rec } => StorageError::IllegalTransition { log, txn, existing, rec },
        }
    }
}

/// Who issued a write and when. The in-memory backend stores it with the
/// record; the Redis backend ignores it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Origin {
    pub node: NodeId,
    pub time: VirtualTime,
}

impl Origin {
    pub fn new(node: NodeId, time: VirtualTime) -> Self {
        Origin { node, time }
    }
}

/// Transaction-state operations against one log. Implementations are
/// linearizable per slot.
pub trait LogStore: Send + Sync {
    fn log_once(&self, origin: Origin, log: LogId, txn: TxnId, rec: RecordType) -> Result<LogState, StorageError>;

    fn log(&self, origin: Origin, log: LogId, txn: TxnId, rec: RecordType) -> Result<(), StorageError>;

    fn read_state(&self, log: LogId, txn: TxnId) -> Result<LogState, StorageError>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    LogOnce(RecordType),
    Log(RecordType),
    Read,
}

/// A storage request as issued by a protocol node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StorageOp {
    pub log: LogId,
    pub txn: TxnId,
    pub kind: OpKind,
}

impl StorageOp {
    pub fn log_once(log: LogId, txn: TxnId, rec: RecordType) -> Self {
        StorageOp { log, txn, kind: OpKind::LogOnce(rec) }
    }

    pub fn log(log: LogId, txn: TxnId, rec: RecordType) -> Self {
        StorageOp { log, txn, kind: OpKind::Log(rec) }
    }

    pub fn read(log: LogId, txn: TxnId) -> Self {
        StorageOp { log, txn, kind: OpKind::Read }
    }

    pub fn is_write(&self) -> bool {
        !matches!(self.kind, OpKind::Read)
    }

    /// Runs the operation against a backend. Plain writes report the state
    /// read back afterwards so that every reply carries a state.
    pub fn execute(&self, store: &dyn LogStore, origin: Origin) -> Result<LogState, StorageError> {
        match self.kind {
            OpKind::LogOnce(rec) => store.log_once(origin, self.log, self.txn, rec),
            OpKind::Log(rec) => {
                store.log(origin, self.log, self.txn, rec)?;
                store.read_state(self.log, self.txn)
            }
            OpKind::Read => store.read_state(self.log, self.txn),
        }
    }
}

impl fmt::Display for StorageOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            OpKind::LogOnce(rec) => write!(f, "LOG_ONCE {} {} {}", self.log, self.txn, rec),
            OpKind::Log(rec) => write!(f, "LOG {} {} {}", self.log, self.txn, rec),
            OpKind::Read => write!(f, "READ {} {}", self.log, self.txn),
        }
    }
}

impl FromStr for StorageOp {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseError::new("storage op", s);
        let parts: Vec<&str> = s.split_whitespace().collect();
        match parts.as_slice() {
            ["LOG_ONCE", log, txn, rec] => Ok(StorageOp::log_once(log.parse()?, txn.parse()?, rec.parse()?)),
            ["LOG", log, txn, rec] => Ok(StorageOp::log(log.parse()?, txn.parse()?, rec.parse()?)),
            ["READ", log, txn] => Ok(StorageOp::read(log.parse()?, txn.parse()?)),
            _ => Err(err()),
        }
    }
}

/// Reply delivered back to the issuing node.
pub type StorageReply = Result<LogState, StorageError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn op_text_round_trip() {
        let txn = TxnId::new(NodeId(0), 4);
        for op in [
            StorageOp::log_once(LogId::participant(NodeId(2)), txn, RecordType::Abort),
            StorageOp::log(LogId::coordinator(NodeId(0)), txn, RecordType::Commit),
            StorageOp::read(LogId::participant(NodeId(1)), txn),
        ] {
            assert_eq!(op.to_string().parse::<StorageOp>().unwrap(), op);
        }
    }
}
