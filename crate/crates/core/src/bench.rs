//! Closed-loop latency benchmark over the simulator.
//!
//! Every node runs a fixed number of workers. Each worker issues a generated
//! transaction, waits for the reply and immediately issues the next, until
//! the virtual duration elapses. Latency is split into execution, prepare
//! and commit phases for committed transactions; an aborted transaction
//! contributes its whole latency to the abort phase. The four phase means
//! therefore add up to the overall mean.

use std::fmt;

use crate::node::{ProtocolKind, Timeouts};
use crate::sim::{run, FaultPlan, SimConfig, SimError, SimResult, TxnOutcome, Workload, DEFAULT_ONE_WAY_US};
use crate::storage::StorageLatencyModel;
use crate::types::Decision;
use crate::workload::WorkloadConfig;

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub protocol: ProtocolKind,
    pub nodes: u32,
    pub one_way_us: u64,
    pub storage: StorageLatencyModel,
    pub workload: WorkloadConfig,
    pub ro_known_in_advance: bool,
    pub workers_per_node: u32,
    pub duration_us: u64,
    pub seed: u64,
    pub faults: FaultPlan,
    /// Overrides the timeouts derived from delay and storage latency.
    pub timeouts: Option<Timeouts>,
}

impl BenchConfig {
    pub fn new(protocol: ProtocolKind, nodes: u32) -> Self {
        BenchConfig {
            protocol,
            nodes,
            one_way_us: DEFAULT_ONE_WAY_US,
            storage: StorageLatencyModel::default(),
            workload: WorkloadConfig::default(),
            ro_known_in_advance: true,
            workers_per_node: 4,
            duration_us: 1_000_000,
            seed: 0,
            faults: FaultPlan::none(),
            timeouts: None,
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        let mut cfg = SimConfig::new(self.protocol, self.nodes).with_timing(self.one_way_us, self.storage);
        cfg.protocol_cfg.ro_known_in_advance = self.ro_known_in_advance;
        if let Some(t) = self.timeouts {
            cfg.protocol_cfg.timeouts = t;
        }
        cfg.faults = self.faults.clone();
        cfg.seed = self.seed;
        cfg
    }

    fn workload(&self) -> Workload {
        Workload::Generated {
            cfg: WorkloadConfig { partitions: self.nodes, seed: self.seed, ..self.workload.clone() },
            workers_per_node: self.workers_per_node,
            duration_us: self.duration_us,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TxnClass {
    SinglePartition,
    DistributedRw,
    ReadOnly,
    All,
}

impl TxnClass {
    pub const ALL: [TxnClass; 4] = [TxnClass::SinglePartition, TxnClass::DistributedRw, TxnClass::ReadOnly, TxnClass::All];

    pub fn contains(self, o: &TxnOutcome) -> bool {
        match self {
            TxnClass::SinglePartition => !o.txn.read_only && !o.txn.is_distributed(),
            TxnClass::DistributedRw => !o.txn.read_only && o.txn.is_distributed(),
            TxnClass::ReadOnly => o.txn.read_only,
            TxnClass::All => true,
        }
    }
}

impl fmt::Display for TxnClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TxnClass::SinglePartition => "single_partition",
            TxnClass::DistributedRw => "distributed_rw",
            TxnClass::ReadOnly => "read_only",
            TxnClass::All => "all",
        })
    }
}

/// Latency statistics for one class, in microseconds.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassStats {
    pub class: TxnClass,
    pub count: usize,
    pub mean_us: f64,
    pub p50_us: u64,
    pub p99_us: u64,
    pub exec_us: f64,
    pub prepare_us: f64,
    pub commit_us: f64,
    pub abort_us: f64,
    pub abort_rate: f64,
}

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[u64], p: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Phase durations of a finished transaction: (exec, prepare, commit, abort).
pub fn phases(o: &TxnOutcome) -> Option<(u64, u64, u64, u64)> {
    let (end, decision) = o.reply?;
    let total = end.since(o.start);
    if decision == Decision::Abort {
        return Some((0, 0, 0, total));
    }
    let exec_done = o.exec_done.unwrap_or(end);
    // Transactions that skip the protocol have no prepare phase.
    let prepare_done = o.prepare_done.unwrap_or(end).max(exec_done);
    Some((exec_done.since(o.start), prepare_done.since(exec_done), end.since(prepare_done), 0))
}

pub fn class_stats(class: TxnClass, outcomes: &[TxnOutcome]) -> ClassStats {
    let mut lat = Vec::new();
    let (mut e, mut p, mut c, mut a, mut aborted) = (0u64, 0u64, 0u64, 0u64, 0usize);
    for o in outcomes.iter().filter(|o| class.contains(o)) {
        let Some((pe, pp, pc, pa)) = phases(o) else { continue };
        lat.push(pe + pp + pc + pa);
        e += pe;
        p += pp;
        c += pc;
        a += pa;
        if o.decision() == Some(Decision::Abort) {
            aborted += 1;
        }
    }
    lat.sort_unstable();
    let n = lat.len();
    let mean = |x: u64| if n == 0 { 0.0 } else { x as f64 / n as f64 };
    ClassStats {
        class,
        count: n,
        mean_us: mean(lat.iter().sum()),
        p50_us: percentile(&lat, 50.0),
        p99_us: percentile(&lat, 99.0),
        exec_us: mean(e),
        prepare_us: mean(p),
        commit_us: mean(c),
        abort_us: mean(a),
        abort_rate: if n == 0 { 0.0 } else { aborted as f64 / n as f64 },
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub protocol: ProtocolKind,
    pub nodes: u32,
    pub theta: f64,
    pub classes: Vec<ClassStats>,
}

impl RunReport {
    pub fn class(&self, class: TxnClass) -> &ClassStats {
        self.classes.iter().find(|c| c.class == class).expect("every class is reported")
    }
}

pub fn report(cfg: &BenchConfig, outcomes: &[TxnOutcome]) -> RunReport {
    RunReport {
        protocol: cfg.protocol,
        nodes: cfg.nodes,
        theta: cfg.workload.zipf_theta,
        classes: TxnClass::ALL.iter().map(|&c| class_stats(c, outcomes)).collect(),
    }
}

/// Runs the benchmark and returns the report with the raw simulation result.
pub fn run_bench(cfg: &BenchConfig) -> Result<(RunReport, SimResult), SimError> {
    let result = run(cfg.sim_config(), cfg.workload())?;
    Ok((report(cfg, &result.txns), result))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::node::TerminationMode;

    fn small(protocol: ProtocolKind) -> BenchConfig {
        let mut cfg = BenchConfig::new(protocol, 4);
        cfg.duration_us = 200_000;
        cfg.seed = 7;
        cfg
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<u64> = (1..=100).collect();
        assert_eq!(percentile(&v, 50.0), 50);
        assert_eq!(percentile(&v, 99.0), 99);
        assert_eq!(percentile(&[7], 99.0), 7);
        assert_eq!(percentile(&[], 50.0), 0);
    }

    #[test]
    fn phases_add_up_to_the_mean() {
        let (r, _) = run_bench(&small(ProtocolKind::Cornus)).unwrap();
        for c in &r.classes {
            let sum = c.exec_us + c.prepare_us + c.commit_us + c.abort_us;
            assert!((sum - c.mean_us).abs() < 1e-6, "{c:?}");
        }
        assert!(r.class(TxnClass::All).count > 100);
    }

    #[test]
    fn deterministic_under_seed() {
        let a = run_bench(&small(ProtocolKind::Cornus)).unwrap().0;
        let b = run_bench(&small(ProtocolKind::Cornus)).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn cornus_has_no_commit_phase_and_beats_2pc() {
        let c = run_bench(&small(ProtocolKind::Cornus)).unwrap().0;
        let t = run_bench(&small(ProtocolKind::TwoPc(TerminationMode::Cooperative))).unwrap().0;
        let (c, t) = (c.class(TxnClass::DistributedRw), t.class(TxnClass::DistributedRw));
        assert_eq!(c.commit_us, 0.0);
        assert!(t.commit_us > 0.0);
        assert!(t.mean_us > c.mean_us, "2pc {} vs cornus {}", t.mean_us, c.mean_us);
    }

    #[test]
    fn known_read_only_skips_prepare_and_commit() {
        for protocol in [ProtocolKind::Cornus, ProtocolKind::TwoPc(TerminationMode::Cooperative)] {
            let mut cfg = small(protocol);
            cfg.workload.read_only_fraction = 0.3;
            let r = run_bench(&cfg).unwrap().0;
            let ro = r.class(TxnClass::ReadOnly);
            assert!(ro.count > 10);
            assert_eq!((ro.prepare_us, ro.commit_us), (0.0, 0.0), "{protocol}");
        }
    }
}
