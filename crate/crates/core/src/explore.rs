//! Exhaustive exploration of small commit scenarios.
//!
//! A scenario fixes the protocol, the node layout, at most one crash point,
//! whether and when the crashed node recovers, which participants vote no,
//! and a delay profile that lines up messages with timeouts. For each
//! scenario the explorer enumerates every ordering of same-instant events at
//! the same actor (depth-first over [`Schedule`] choices) and feeds each
//! resulting trace to the checker.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::check::{check, Summary, Verdict};
use crate::message::MessageKind;
use crate::node::{Mutation, ProtocolKind, TerminationMode};
use crate::sim::{
    CrashPoint, FailureCase, FaultPlan, LinkOverride, Schedule, ScriptedTxn, Sim, SimConfig, SimError, StorageOutage, Workload,
    DEFAULT_ONE_WAY_US,
};
use crate::storage::StorageLatencyModel;
use crate::trace::Trace;
use crate::types::{Access, NodeId, Transaction, TxnId, VirtualTime};

pub const ALL_PROTOCOLS: [ProtocolKind; 3] =
    [ProtocolKind::Cornus, ProtocolKind::TwoPc(TerminationMode::Naive), ProtocolKind::TwoPc(TerminationMode::Cooperative)];

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error("exploration produced more than {0} traces; raise the cap or shrink the instance")]
    TooManyTraces(usize),
    #[error("at least 2 nodes are needed, got {0}")]
    TooFewNodes(u32),
    #[error("at most 5 nodes are supported, got {0}")]
    TooManyNodes(u32),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Clone, Debug)]
pub struct ExploreConfig {
    pub nodes: u32,
    pub protocols: Vec<ProtocolKind>,
    pub mutation: Option<Mutation>,
    pub max_traces: usize,
    pub one_way_us: u64,
    pub storage: StorageLatencyModel,
}

impl ExploreConfig {
    pub fn new(nodes: u32) -> Self {
        ExploreConfig {
            nodes,
            protocols: ALL_PROTOCOLS.to_vec(),
            mutation: None,
            max_traces: 1_000_000,
            one_way_us: DEFAULT_ONE_WAY_US,
            storage: StorageLatencyModel::default(),
        }
    }

    fn validate(&self) -> Result<(), ExploreError> {
        match self.nodes {
            0 | 1 => Err(ExploreError::TooFewNodes(self.nodes)),
            2..=5 => Ok(()),
            n => Err(ExploreError::TooManyNodes(n)),
        }
    }

    fn base(&self, protocol: ProtocolKind) -> SimConfig {
        let mut cfg = SimConfig::new(protocol, self.nodes).with_timing(self.one_way_us, self.storage);
        if protocol == ProtocolKind::Cornus {
            cfg.protocol_cfg.mutation = self.mutation;
        }
        cfg
    }
}

/// Where the coordinator sits relative to the data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Layout {
    /// n0 coordinates, every other node is a participant.
    Separate,
    /// n0 coordinates and also holds data.
    CoLocated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Recovery {
    Never,
    /// Two one-way delays after the crash.
    Soon,
    /// After every timeout has fired several times.
    Late,
}

/// Message delays chosen to land exactly on, or just past, a timeout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DelayProfile {
    Uniform,
    /// The first participant's vote request arrives just after its timeout.
    LateVoteReq,
    /// ... exactly at its timeout.
    VoteReqRace,
    /// The decision reaches the first participant exactly when its decision
    /// timer fires.
    DecisionRace,
    /// ... just after.
    LateDecision,
}

impl DelayProfile {
    pub const ALL: [DelayProfile; 5] = [
        DelayProfile::Uniform,
        DelayProfile::LateVoteReq,
        DelayProfile::VoteReqRace,
        DelayProfile::DecisionRace,
        DelayProfile::LateDecision,
    ];
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scenario {
    pub protocol: ProtocolKind,
    pub layout: Layout,
    pub crash: Option<CrashPoint>,
    pub recovery: Recovery,
    pub no_voters: BTreeSet<NodeId>,
    pub delay: DelayProfile,
}

impl Scenario {
    pub fn case(&self) -> Option<FailureCase> {
        self.crash.map(CrashPoint::case)
    }

    pub fn participants(&self, nodes: u32) -> Vec<NodeId> {
        let first = match self.layout {
            Layout::Separate => 1,
            Layout::CoLocated => 0,
        };
        (first..nodes).map(NodeId).collect()
    }

    fn txn(&self, nodes: u32) -> Transaction {
        let accesses = self.participants(nodes).into_iter().map(|p| (p, vec![Access::write(u64::from(p.0))])).collect();
        Transaction::new(TxnId::new(NodeId(0), 1), accesses).expect("non-empty")
    }

    /// Builds the simulator input for this scenario.
    pub fn build(&self, ex: &ExploreConfig) -> (SimConfig, Workload) {
        let mut cfg = ex.base(self.protocol);
        let t = cfg.protocol_cfg.timeouts;
        let d = cfg.net.one_way_us;
        let w = cfg.storage.write_latency_us();
        let p1 = NodeId(1);
        let over = |kind, delay_us| LinkOverride { from: Some(NodeId(0)), to: Some(p1), kind: Some(kind), delay_us };
        // The first participant arms its decision timer once its vote is
        // durable, at d + W; the decision leaves the coordinator after the
        // last vote arrives, plus the decision write for 2PC.
        let decision_sent = match self.protocol {
            ProtocolKind::Cornus => 2 * d + w,
            ProtocolKind::TwoPc(_) => 2 * d + 2 * w,
        };
        let decision_race = (d + w + t.decision_us).saturating_sub(decision_sent);
        match self.delay {
            DelayProfile::Uniform => {}
            DelayProfile::LateVoteReq => cfg.net.overrides.push(over(MessageKind::VoteReq, t.vote_req_us + 1)),
            DelayProfile::VoteReqRace => cfg.net.overrides.push(over(MessageKind::VoteReq, t.vote_req_us)),
            DelayProfile::DecisionRace => cfg.net.overrides.push(over(MessageKind::Decision, decision_race)),
            DelayProfile::LateDecision => cfg.net.overrides.push(over(MessageKind::Decision, decision_race + 1)),
        }
        let parts = self.participants(ex.nodes);
        if let Some(cp) = self.crash {
            let max_t = t.vote_req_us.max(t.votes_us).max(t.decision_us).max(t.termination_us);
            let recover = match self.recovery {
                Recovery::Never => None,
                Recovery::Soon => Some(2 * d),
                Recovery::Late => Some(4 * max_t),
            };
            cfg.faults = FaultPlan::none().crash(cp.fault(NodeId(0), parts.len() as u32, recover));
        }
        let txn = ScriptedTxn::new(self.txn(ex.nodes)).no_voters(self.no_voters.iter().copied());
        (cfg, Workload::Scripted(vec![txn]))
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let layout = match self.layout {
            Layout::Separate => "separate",
            Layout::CoLocated => "colocated",
        };
        write!(f, "{} {layout} ", self.protocol)?;
        match self.crash {
            Some(c) => write!(f, "crash={c} recover={:?}", self.recovery)?,
            None => f.write_str("crash=none")?,
        }
        let no: Vec<String> = self.no_voters.iter().map(|n| n.to_string()).collect();
        write!(f, " no={} delay={:?}", if no.is_empty() { "-".into() } else { no.join(",") }, self.delay)
    }
}

fn subsets(items: &[NodeId]) -> Vec<BTreeSet<NodeId>> {
    (0u32..1 << items.len()).map(|mask| items.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, &n)| n).collect()).collect()
}

/// Every scenario for the configured size and protocols.
pub fn scenarios(ex: &ExploreConfig) -> Vec<Scenario> {
    let mut out = Vec::new();
    for &protocol in &ex.protocols {
        for layout in [Layout::Separate, Layout::CoLocated] {
            let proto = Scenario {
                protocol,
                layout,
                crash: None,
                recovery: Recovery::Never,
                no_voters: BTreeSet::new(),
                delay: DelayProfile::Uniform,
            };
            let parts = proto.participants(ex.nodes);
            let mut crashes: Vec<(Option<CrashPoint>, Recovery)> = vec![(None, Recovery::Never)];
            let mut points = CrashPoint::coordinator_points(parts.len() as u32);
            for &p in parts.iter().filter(|&&p| p != NodeId(0)) {
                points.extend(CrashPoint::participant_points(p));
            }
            for cp in points {
                for r in [Recovery::Never, Recovery::Soon, Recovery::Late] {
                    crashes.push((Some(cp), r));
                }
            }
            for (crash, recovery) in crashes {
                for no_voters in subsets(&parts) {
                    for delay in DelayProfile::ALL {
                        out.push(Scenario { crash, recovery, no_voters: no_voters.clone(), delay, ..proto.clone() });
                    }
                }
            }
        }
    }
    out
}

/// Trace counts for one protocol and failure case.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CaseCounts {
    pub scenarios: usize,
    pub traces: usize,
    pub failed: usize,
    pub blocked: usize,
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub per_protocol: BTreeMap<String, Summary>,
    /// `None` is the fault-free case.
    pub per_case: BTreeMap<(String, Option<FailureCase>), CaseCounts>,
    pub traces: usize,
    /// First failing scenario with its schedule and verdict report.
    pub first_failure: Option<(String, Vec<u32>, String)>,
}

impl Report {
    pub fn summary(&self, protocol: ProtocolKind) -> Option<&Summary> {
        self.per_protocol.get(&protocol.to_string())
    }

    pub fn case(&self, protocol: ProtocolKind, case: Option<FailureCase>) -> CaseCounts {
        self.per_case.get(&(protocol.to_string(), case)).copied().unwrap_or_default()
    }

    pub fn requirements_hold(&self) -> bool {
        self.per_protocol.values().all(Summary::requirements_hold)
    }

    pub fn failed(&self) -> usize {
        self.per_protocol.values().map(|s| s.failed).sum()
    }
}

/// Runs every tie-breaking order of one scenario.
pub fn explore_scenario(
    ex: &ExploreConfig,
    scenario: &Scenario,
    budget: usize,
    mut visit: impl FnMut(&[u32], &Trace),
) -> Result<usize, ExploreError> {
    let (cfg, workload) = scenario.build(ex);
    let mut stack: Vec<Vec<u32>> = vec![Vec::new()];
    let mut runs = 0;
    while let Some(prefix) = stack.pop() {
        runs += 1;
        if runs > budget {
            return Err(ExploreError::TooManyTraces(ex.max_traces));
        }
        let mut sched = Schedule::replay(prefix.clone());
        let result = Sim::new(cfg.clone(), workload.clone())?.with_schedule(&mut sched).run()?;
        let chosen: Vec<u32> = sched.taken.iter().map(|t| t.0).collect();
        visit(&chosen, &result.trace);
        for j in prefix.len()..sched.taken.len() {
            for c in 1..sched.taken[j].1 {
                let mut p = chosen[..j].to_vec();
                p.push(c);
                stack.push(p);
            }
        }
    }
    Ok(runs)
}

/// Explores every scenario and checks every trace. `visit` sees each trace
/// along with its verdict.
pub fn explore(ex: &ExploreConfig, mut visit: impl FnMut(&Scenario, &Trace, &Verdict)) -> Result<Report, ExploreError> {
    ex.validate()?;
    let mut report = Report::default();
    for scenario in scenarios(ex) {
        let key = scenario.protocol.to_string();
        let case = scenario.case();
        report.per_case.entry((key.clone(), case)).or_default().scenarios += 1;
        let budget = ex.max_traces - report.traces;
        let mut failures = Vec::new();
        let n = explore_scenario(ex, &scenario, budget, |sched, trace| {
            let v = check(trace);
            let summary = report.per_protocol.entry(key.clone()).or_default();
            let idx = summary.traces;
            summary.add(idx, trace, &v);
            let counts = report.per_case.entry((key.clone(), case)).or_default();
            counts.traces += 1;
            if !v.passed() {
                counts.failed += 1;
                failures.push((sched.to_vec(), v.failures().map(|f| format!("{f}\n")).collect::<String>()));
            } else if v.is_blocked() {
                counts.blocked += 1;
            }
            visit(&scenario, trace, &v);
        })?;
        report.traces += n;
        if report.first_failure.is_none() {
            if let Some((sched, text)) = failures.into_iter().next() {
                report.first_failure = Some((scenario.to_string(), sched, text));
            }
        }
    }
    Ok(report)
}

/// Traces where storage goes down mid-protocol and never returns, one per
/// protocol. Cornus is expected to block here.
pub fn storage_down_traces(ex: &ExploreConfig) -> Result<Vec<(ProtocolKind, Trace)>, ExploreError> {
    ex.validate()?;
    let mut out = Vec::new();
    for &protocol in &ex.protocols {
        let mut cfg = ex.base(protocol);
        // Vote requests are out, but no vote is durable yet.
        let at = VirtualTime(cfg.net.one_way_us);
        cfg.faults = FaultPlan::none().outage(StorageOutage { at, until: None });
        let s = Scenario {
            protocol,
            layout: Layout::Separate,
            crash: None,
            recovery: Recovery::Never,
            no_voters: BTreeSet::new(),
            delay: DelayProfile::Uniform,
        };
        let txn = ScriptedTxn { txn: Arc::new(s.txn(ex.nodes)), start: VirtualTime::ZERO, no_voters: BTreeSet::new(), execute: false };
        let r = Sim::new(cfg, Workload::Scripted(vec![txn]))?.run()?;
        out.push((protocol, r.trace));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::check::{BlockCause, Status};
    use crate::sim::CoordinatorCrash;
    use crate::types::Decision;

    #[test]
    fn scenario_count_matches_the_cross_product() {
        let ex = ExploreConfig::new(3);
        let s = scenarios(&ex);
        // Separate: 2 participants, 8 coordinator points + 8 participant
        // points, 3 recoveries, plus fault-free; 4 vote patterns; 5 delays.
        let separate = (1 + (8 + 8) * 3) * 4 * 5;
        // Co-located: 3 participants, 10 coordinator points + 8 participant
        // points; 8 vote patterns.
        let colocated = (1 + (10 + 8) * 3) * 8 * 5;
        assert_eq!(s.len(), 3 * (separate + colocated));
    }

    #[test]
    fn fault_free_orderings_all_commit() {
        let ex = ExploreConfig::new(3);
        for protocol in ALL_PROTOCOLS {
            let s = Scenario {
                protocol,
                layout: Layout::Separate,
                crash: None,
                recovery: Recovery::Never,
                no_voters: BTreeSet::new(),
                delay: DelayProfile::Uniform,
            };
            let mut traces = 0;
            explore_scenario(&ex, &s, 1000, |_, trace| {
                traces += 1;
                let v = check(trace);
                assert!(v.passed() && !v.is_blocked(), "{}", v.report());
                assert!(trace.events.iter().any(|e| matches!(e.kind, crate::trace::TraceKind::Reply { decision: Decision::Commit, .. })));
            })
            .unwrap();
            // Simultaneous votes are interchangeable: nothing to branch on.
            assert_eq!(traces, 1, "{protocol}");
        }
    }

    #[test]
    fn race_profiles_branch() {
        let ex = ExploreConfig::new(3);
        for delay in [DelayProfile::VoteReqRace, DelayProfile::DecisionRace] {
            let s = Scenario {
                protocol: ProtocolKind::Cornus,
                layout: Layout::Separate,
                crash: None,
                recovery: Recovery::Never,
                no_voters: BTreeSet::new(),
                delay,
            };
            let mut outcomes = BTreeSet::new();
            let n = explore_scenario(&ex, &s, 1000, |_, trace| {
                let v = check(trace);
                assert!(v.passed(), "{}", v.report());
                outcomes.insert(trace.to_text());
            })
            .unwrap();
            assert!(n >= 2, "{delay:?}: {n}");
            assert_eq!(outcomes.len(), n);
        }
    }

    #[test]
    fn coordinator_crash_before_decision_blocks_2pc_not_cornus() {
        let ex = ExploreConfig::new(3);
        for protocol in ALL_PROTOCOLS {
            let s = Scenario {
                protocol,
                layout: Layout::Separate,
                crash: Some(CrashPoint::Coordinator(CoordinatorCrash::BeforeLastVote)),
                recovery: Recovery::Never,
                no_voters: BTreeSet::new(),
                delay: DelayProfile::Uniform,
            };
            explore_scenario(&ex, &s, 1000, |_, trace| {
                let v = check(trace);
                assert!(v.passed(), "{}", v.report());
                if protocol == ProtocolKind::Cornus {
                    assert!(!v.is_blocked(), "{}", v.report());
                } else {
                    assert!(v.blocked().any(|f| matches!(f.status, Status::Blocked { cause: BlockCause::CoordinatorDown, .. })));
                }
            })
            .unwrap();
        }
    }

    #[test]
    fn storage_down_blocks_cornus() {
        let ex = ExploreConfig::new(3);
        for (protocol, trace) in storage_down_traces(&ex).unwrap() {
            let v = check(&trace);
            assert!(v.passed(), "{protocol}: {}", v.report());
            assert!(v.is_blocked() && !v.blocked_with_storage_alive(), "{protocol}: {}", v.report());
        }
    }

    #[test]
    fn trace_cap_is_enforced() {
        let mut ex = ExploreConfig::new(3);
        ex.max_traces = 5;
        assert!(matches!(explore(&ex, |_, _, _| {}), Err(ExploreError::TooManyTraces(5))));
        assert!(matches!(explore(&ExploreConfig::new(1), |_, _, _| {}), Err(ExploreError::TooFewNodes(1))));
    }
}
