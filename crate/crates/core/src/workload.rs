//! YCSB-style transaction generator and a NO-WAIT lock table.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::types::{Access, AccessMode, NodeId, Transaction, TxnId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkloadError {
    #[error("{name} must be in [0, 1], got {value}")]
    Probability { name: &'static str, value: f64 },
    #[error("zipf theta must be finite and >= 0, got {0}")]
    Theta(f64),
    #[error("{0} must be positive")]
    Zero(&'static str),
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadConfig {
    pub partitions: u32,
    pub rows_per_partition: u64,
    pub accesses_per_txn: usize,
    pub write_prob: f64,
    pub zipf_theta: f64,
    /// Probability that a transaction is forced to be read-only, on top of
    /// the read-only transactions that arise from per-access sampling.
    pub read_only_fraction: f64,
    pub seed: u64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            partitions: 4,
            rows_per_partition: 10_000,
            accesses_per_txn: 16,
            write_prob: 0.5,
            zipf_theta: 0.0,
            read_only_fraction: 0.0,
            seed: 0,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        for (name, value) in [("write_prob", self.write_prob), ("read_only_fraction", self.read_only_fraction)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(WorkloadError::Probability { name, value });
            }
        }
        if !self.zipf_theta.is_finite() || self.zipf_theta < 0.0 {
            return Err(WorkloadError::Theta(self.zipf_theta));
        }
        if self.partitions == 0 {
            return Err(WorkloadError::Zero("partitions"));
        }
        if self.rows_per_partition == 0 {
            return Err(WorkloadError::Zero("rows_per_partition"));
        }
        if self.accesses_per_txn == 0 {
            return Err(WorkloadError::Zero("accesses_per_txn"));
        }
        Ok(())
    }
}

/// Zipfian sampler over ranks `0..n` with `P(k) ∝ 1 / (k + 1)^theta`.
#[derive(Clone, Debug)]
pub struct Zipf {
    cumulative: Vec<f64>,
}

impl Zipf {
    pub fn new(n: u64, theta: f64) -> Self {
        assert!(n > 0, "zipf over an empty range");
        let mut acc = 0.0;
        let cumulative = (1..=n)
            .map(|i| {
                acc += (i as f64).powf(-theta);
                acc
            })
            .collect();
        Zipf { cumulative }
    }

    pub fn len(&self) -> u64 {
        self.cumulative.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.cumulative.is_empty()
    }

    /// Sum of the unnormalized weights.
    pub fn normalizer(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u = rng.gen::<f64>() * self.normalizer();
        let idx = self.cumulative.partition_point(|&c| c <= u);
        idx.min(self.cumulative.len() - 1) as u64
    }
}

/// Deterministic transaction source.
#[derive(Clone, Debug)]
pub struct Generator {
    cfg: WorkloadConfig,
    zipf: Zipf,
    rng: ChaCha8Rng,
}

impl Generator {
    pub fn new(cfg: WorkloadConfig) -> Result<Self, WorkloadError> {
        cfg.validate()?;
        Ok(Generator { zipf: Zipf::new(cfg.rows_per_partition, cfg.zipf_theta), rng: ChaCha8Rng::seed_from_u64(cfg.seed), cfg })
    }

    pub fn config(&self) -> &WorkloadConfig {
        &self.cfg
    }

    pub fn next_txn(&mut self, id: TxnId) -> Transaction {
        let force_ro = self.cfg.read_only_fraction > 0.0 && self.rng.gen_bool(self.cfg.read_only_fraction);
        let mut accesses: BTreeMap<NodeId, Vec<Access>> = BTreeMap::new();
        for _ in 0..self.cfg.accesses_per_txn {
            let partition = NodeId(self.rng.gen_range(0..self.cfg.partitions));
            let key = self.zipf.sample(&mut self.rng);
            let write = !force_ro && self.rng.gen_bool(self.cfg.write_prob);
            let mode = if write { AccessMode::Write } else { AccessMode::Read };
            accesses.entry(partition).or_default().push(Access { key, mode });
        }
        Transaction::new(id, accesses).expect("at least one access")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Lock {
    Shared(BTreeSet<TxnId>),
    Exclusive(TxnId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LockResult {
    Granted,
    NoWaitAbort,
}

/// Per-partition NO-WAIT lock table: an incompatible request is refused
/// immediately instead of queuing.
#[derive(Clone, Debug, Default)]
pub struct LockTable {
    locks: HashMap<u64, Lock>,
    held: BTreeMap<TxnId, BTreeSet<u64>>,
}

impl LockTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn acquire(&mut self, key: u64, mode: AccessMode, txn: TxnId) -> LockResult {
        let granted = match (self.locks.get_mut(&key), mode) {
            (None, AccessMode::Read) => {
                self.locks.insert(key, Lock::Shared([txn].into()));
                true
            }
            (None, AccessMode::Write) => {
                self.locks.insert(key, Lock::Exclusive(txn));
                true
            }
            (Some(Lock::Exclusive(owner)), _) => *owner == txn,
            (Some(Lock::Shared(holders)), AccessMode::Read) => {
                holders.insert(txn);
                true
            }
            (Some(lock @ Lock::Shared(_)), AccessMode::Write) => {
                let Lock::Shared(holders) = &*lock else { unreachable!() };
                // Upgrade only when no one else shares the key.
                let sole = holders.len() == 1 && holders.contains(&txn);
                if sole {
                    *lock = Lock::Exclusive(txn);
                }
                sole
            }
        };
        if granted {
            self.held.entry(txn).or_default().insert(key);
            LockResult::Granted
        } else {
            LockResult::NoWaitAbort
        }
    }

    /// Acquires every access or none of them.
    pub fn acquire_all(&mut self, txn: TxnId, accesses: &[Access]) -> LockResult {
        for a in accesses {
            if self.acquire(a.key, a.mode, txn) == LockResult::NoWaitAbort {
                self.release_all(txn);
                return LockResult::NoWaitAbort;
            }
        }
        LockResult::Granted
    }

    pub fn release_all(&mut self, txn: TxnId) {
        let Some(keys) = self.held.remove(&txn) else {
            return;
        };
        for key in keys {
            let free = match self.locks.get_mut(&key) {
                Some(Lock::Exclusive(owner)) => *owner == txn,
                Some(Lock::Shared(holders)) => {
                    holders.remove(&txn);
                    holders.is_empty()
                }
                None => false,
            };
            if free {
                self.locks.remove(&key);
            }
        }
    }

    pub fn holds(&self, txn: TxnId) -> bool {
        self.held.get(&txn).is_some_and(|k| !k.is_empty())
    }

    pub fn is_empty(&self) -> bool {
        self.locks.is_empty()
    }

    pub fn clear(&mut self) {
        self.locks.clear();
        self.held.clear();
    }
}
