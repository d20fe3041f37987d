use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use super::{OpKind, StorageOp};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid storage model {input:?}: {reason}")]
pub struct LatencyModelError {
    pub input: String,
    pub reason: &'static str,
}

/// How long a storage operation takes as observed by the issuing node.
///
/// `Fixed` charges a constant client-observed latency per operation.
/// `PaxosLeader` models a Multi-Paxos group with a stable leader: a write
/// costs one round trip to the leader plus one leader-to-acceptors round
/// trip, so four one-way delays; a leader read costs one round trip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StorageLatencyModel {
    Fixed { write_us: u64, read_us: u64 },
    PaxosLeader { one_way_us: u64, acceptors: u32 },
}

impl Default for StorageLatencyModel {
    /// Measured conditional-write latency of a managed Redis service.
    fn default() -> Self {
        StorageLatencyModel::Fixed { write_us: 1960, read_us: 1960 }
    }
}

impl StorageLatencyModel {
    pub fn fixed(write_us: u64) -> Self {
        StorageLatencyModel::Fixed { write_us, read_us: write_us }
    }

    pub fn paxos(one_way_us: u64, acceptors: u32) -> Self {
        StorageLatencyModel::PaxosLeader { one_way_us, acceptors }
    }

    pub fn write_latency_us(&self) -> u64 {
        match *self {
            StorageLatencyModel::Fixed { write_us, .. } => write_us,
            StorageLatencyModel::PaxosLeader { one_way_us, .. } => 4 * one_way_us,
        }
    }

    pub fn read_latency_us(&self) -> u64 {
        match *self {
            StorageLatencyModel::Fixed { read_us, .. } => read_us,
            StorageLatencyModel::PaxosLeader { one_way_us, .. } => 2 * one_way_us,
        }
    }

    /// `(apply_after, respond_after)` relative to issue time. The slot update
    /// is linearized at `apply_after`; the reply reaches the caller at
    /// `respond_after`.
    pub fn timing(&self, op: &StorageOp) -> (u64, u64) {
        let write = !matches!(op.kind, OpKind::Read);
        match *self {
            StorageLatencyModel::Fixed { write_us, read_us } => {
                let total = if write { write_us } else { read_us };
                (total / 2, total)
            }
            StorageLatencyModel::PaxosLeader { one_way_us, .. } => {
                if write {
                    (3 * one_way_us, 4 * one_way_us)
                } else {
                    (one_way_us, 2 * one_way_us)
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), LatencyModelError> {
        match *self {
            StorageLatencyModel::PaxosLeader { acceptors: 0, .. } => {
                Err(LatencyModelError { input: self.to_string(), reason: "a Paxos group needs at least one acceptor" })
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for StorageLatencyModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            StorageLatencyModel::Fixed { write_us, read_us } if write_us == read_us => write!(f, "fixed:{write_us}"),
            StorageLatencyModel::Fixed { write_us, read_us } => write!(f, "fixed:{write_us}:{read_us}"),
            StorageLatencyModel::PaxosLeader { one_way_us, acceptors } => write!(f, "paxos:{one_way_us}:{acceptors}"),
        }
    }
}

/// Parses `fixed:W_us`, `fixed:W_us:R_us` or `paxos:d_us:acceptors`.
impl FromStr for StorageLatencyModel {
    type Err = LatencyModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason| LatencyModelError { input: s.to_string(), reason };
        let parts: Vec<&str> = s.split(':').collect();
        let num = |p: &str| p.parse::<u64>().map_err(|_| err("expected an integer"));
        let model = match parts.as_slice() {
            ["fixed", w] => StorageLatencyModel::fixed(num(w)?),
            ["fixed", w, r] => StorageLatencyModel::Fixed { write_us: num(w)?, read_us: num(r)? },
            ["paxos", d, n] => StorageLatencyModel::PaxosLeader {
                one_way_us: num(d)?,
                acceptors: num(n)?.try_into().map_err(|_| err("too many acceptors"))?,
            },
            _ => return Err(err("expected fixed:W, fixed:W:R or paxos:d:acceptors")),
        };
        model.validate()?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{LogId, NodeId, RecordType, TxnId};

    #[test]
    fn paxos_write_is_two_round_trips() {
        let m = StorageLatencyModel::paxos(250, 2);
        assert_eq!(m.write_latency_us(), 1000);
        let op = StorageOp::log_once(LogId::participant(NodeId(1)), TxnId::new(NodeId(0), 1), RecordType::VoteYes);
        assert_eq!(m.timing(&op), (750, 1000));
    }

    #[test]
    fn parse_models() {
        assert_eq!("fixed:1960".parse(), Ok(StorageLatencyModel::fixed(1960)));
        assert_eq!("fixed:1960:900".parse(), Ok(StorageLatencyModel::Fixed { write_us: 1960, read_us: 900 }));
        assert_eq!("paxos:250:2".parse(), Ok(StorageLatencyModel::paxos(250, 2)));
        assert!("paxos:250:0".parse::<StorageLatencyModel>().is_err());
        assert!("redis".parse::<StorageLatencyModel>().is_err());
        let m = StorageLatencyModel::paxos(100, 3);
        assert_eq!(m.to_string().parse(), Ok(m));
    }
}
