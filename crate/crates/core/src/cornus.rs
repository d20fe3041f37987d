//! The Cornus commit protocol.
//!
//! The outcome of a transaction is carried entirely by the participants'
//! votes in shared storage: it commits iff every participant log holds
//! `VOTE_YES`. The coordinator therefore answers the caller as soon as it has
//! the votes and never writes a decision record. A node that times out runs
//! the termination protocol: it `log_once(ABORT)`s every other participant's
//! log, which either reveals the existing state or enforces an abort.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::message::{Message, Vote};
use crate::node::{CommitProtocol, Effect, Input, Mutation, ProtocolConfig, ReqId, Requests, TimerKey, TimerKind};
use crate::storage::{StorageError, StorageOp, StorageReply};
use crate::types::{Decision, LogId, LogState, NodeId, RecordType, Transaction, TxnId, VirtualTime};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoordinatorPhase {
    SendingVoteReq,
    AwaitingVotes,
    Terminating,
    Decided,
}

#[derive(Clone, Debug)]
pub struct CoordinatorState {
    pub txn: Arc<Transaction>,
    pub phase: CoordinatorPhase,
    pub votes: BTreeMap<NodeId, Option<Vote>>,
    pub decision: Option<Decision>,
    pub reply_time: Option<VirtualTime>,
    termination: Option<Termination>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParticipantPhase {
    AwaitingVoteReq,
    /// Timed out before VOTE-REQ; waiting for the ABORT record to persist.
    AbortingUnilaterally,
    LoggingVote,
    AwaitingDecision,
    Terminating,
    /// Restarted; reading its own slot.
    Recovering,
    Done,
}

#[derive(Clone, Debug)]
pub struct ParticipantState {
    pub txn: Arc<Transaction>,
    pub phase: ParticipantPhase,
    pub vote_yes: bool,
    pub local_vote: Option<Vote>,
    pub final_decision: Option<Decision>,
    /// A decision that arrived while the vote write was in flight.
    early_decision: Option<Decision>,
    termination: Option<Termination>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Role {
    Coordinator,
    Participant,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Purpose {
    VoteLog(TxnId),
    UnilateralAbort(TxnId),
    /// Fire-and-forget ABORT record.
    AsyncAbort(TxnId),
    DecisionLog(TxnId),
    Terminate {
        txn: TxnId,
        role: Role,
        attempt: u32,
        target: NodeId,
    },
    RecoverRead(TxnId),
}

/// One round of the termination protocol.
#[derive(Clone, Debug)]
struct Termination {
    attempt: u32,
    /// Logs that have not yet answered `VOTE_YES` in this round.
    outstanding: BTreeSet<NodeId>,
}

impl Termination {
    fn on_reply(&mut self, target: NodeId, state: LogState) -> Option<Decision> {
        match state {
            LogState::Aborted => Some(Decision::Abort),
            LogState::Committed => Some(Decision::Commit),
            LogState::VoteYes => {
                self.outstanding.remove(&target);
                self.outstanding.is_empty().then_some(Decision::Commit)
            }
            LogState::None => None,
        }
    }
}

/// A compute node running Cornus. It plays the coordinator role for the
/// transactions it starts and the participant role for every transaction
/// that touched its partition.
#[derive(Debug)]
pub struct CornusNode {
    id: NodeId,
    cfg: ProtocolConfig,
    coordinators: BTreeMap<TxnId, CoordinatorState>,
    participants: BTreeMap<TxnId, ParticipantState>,
    requests: Requests<Purpose>,
}

impl CornusNode {
    pub fn new(id: NodeId, cfg: ProtocolConfig) -> Self {
        CornusNode { id, cfg, coordinators: BTreeMap::new(), participants: BTreeMap::new(), requests: Requests::new() }
    }

    pub fn coordinator_state(&self, txn: TxnId) -> Option<&CoordinatorState> {
        self.coordinators.get(&txn)
    }

    pub fn participant_state(&self, txn: TxnId) -> Option<&ParticipantState> {
        self.participants.get(&txn)
    }

    fn own_log(&self) -> LogId {
        LogId::participant(self.id)
    }

    // ---- coordinator ----

    fn coordinator_start(&mut self, now: VirtualTime, txn: Arc<Transaction>, out: &mut Vec<Effect>) {
        if txn.read_only && self.cfg.ro_known_in_advance {
            out.push(Effect::Reply { txn: txn.id, decision: Decision::Commit });
            for &p in &txn.participants {
                out.push(Effect::Send { to: p, msg: Message::Release { txn: txn.id } });
            }
            return;
        }
        let participants: Vec<NodeId> = txn.participants.iter().copied().collect();
        out.push(Effect::Begin { txn: txn.id, participants: participants.clone() });
        let mut state = CoordinatorState {
            txn: Arc::clone(&txn),
            phase: CoordinatorPhase::SendingVoteReq,
            votes: participants.iter().map(|&p| (p, None)).collect(),
            decision: None,
            reply_time: None,
            termination: None,
        };
        for &p in &participants {
            out.push(Effect::Send { to: p, msg: Message::VoteReq { txn: txn.id, participants: participants.clone() } });
        }
        state.phase = CoordinatorPhase::AwaitingVotes;
        out.push(Effect::SetTimer { key: TimerKey::new(txn.id, TimerKind::Votes), after_us: self.cfg.timeouts.votes_us });
        self.coordinators.insert(txn.id, state);
        let _ = now;
    }

    fn coordinator_on_vote(&mut self, now: VirtualTime, from: NodeId, txn: TxnId, vote: Vote, out: &mut Vec<Effect>) {
        let Some(state) = self.coordinators.get_mut(&txn) else {
            return;
        };
        if state.phase != CoordinatorPhase::AwaitingVotes || !state.votes.contains_key(&from) {
            return;
        }
        state.votes.insert(from, Some(vote));
        match vote {
            Vote::Abort => self.coordinator_decide(now, txn, Decision::Abort, out),
            Vote::Yes | Vote::ReadOnly => {
                if state.votes.values().all(|v| v.is_some()) {
                    self.coordinator_decide(now, txn, Decision::Commit, out);
                }
            }
        }
    }

    fn coordinator_decide(&mut self, now: VirtualTime, txn: TxnId, decision: Decision, out: &mut Vec<Effect>) {
        let Some(state) = self.coordinators.get_mut(&txn) else {
            return;
        };
        if state.phase == CoordinatorPhase::Decided {
            return;
        }
        state.phase = CoordinatorPhase::Decided;
        state.decision = Some(decision);
        state.reply_time = Some(now);
        state.termination = None;
        out.push(Effect::CancelTimer(TimerKey::new(txn, TimerKind::Votes)));
        out.push(Effect::CancelTimer(TimerKey::new(txn, TimerKind::CoordinatorTermination)));
        out.push(Effect::PrepareDone { txn });
        out.push(Effect::Decide { txn, decision });
        out.push(Effect::Reply { txn, decision });
        for &p in &state.txn.participants {
            out.push(Effect::Send { to: p, msg: Message::Decision { txn, decision } });
        }
        self.requests.forget(|p| matches!(p, Purpose::Terminate { txn: t, role: Role::Coordinator, .. } if *t == txn));
    }

    // ---- termination protocol ----

    /// Issues one round of conditional ABORT writes to `targets`.
    fn start_termination(&mut self, txn: TxnId, role: Role, attempt: u32, targets: BTreeSet<NodeId>, out: &mut Vec<Effect>) -> Termination {
        self.requests.forget(|p| matches!(p, Purpose::Terminate { txn: t, role: r, .. } if *t == txn && *r == role));
        for &target in &targets {
            let log = LogId::participant(target);
            let op = match self.cfg.mutation {
                Some(Mutation::TerminationPlainLog) => StorageOp::log(log, txn, RecordType::Abort),
                None => StorageOp::log_once(log, txn, RecordType::Abort),
            };
            self.requests.issue(op, Purpose::Terminate { txn, role, attempt, target }, out);
        }
        let kind = match role {
            Role::Coordinator => TimerKind::CoordinatorTermination,
            Role::Participant => TimerKind::Termination,
        };
        out.push(Effect::SetTimer { key: TimerKey::new(txn, kind), after_us: self.cfg.timeouts.termination_us });
        Termination { attempt, outstanding: targets }
    }

    fn coordinator_terminate(&mut self, txn: TxnId, attempt: u32, out: &mut Vec<Effect>) {
        let Some(state) = self.coordinators.get(&txn) else {
            return;
        };
        let targets = state.txn.participants.clone();
        let term = self.start_termination(txn, Role::Coordinator, attempt, targets, out);
        let state = self.coordinators.get_mut(&txn).unwrap();
        state.phase = CoordinatorPhase::Terminating;
        state.termination = Some(term);
    }

    fn participant_terminate(&mut self, now: VirtualTime, txn: TxnId, attempt: u32, out: &mut Vec<Effect>) {
        let Some(state) = self.participants.get(&txn) else {
            return;
        };
        let targets: BTreeSet<NodeId> = state.txn.participants.iter().copied().filter(|&p| p != self.id).collect();
        if targets.is_empty() {
            // Sole participant with a VOTE_YES on record.
            self.participant_learn(now, txn, Decision::Commit, out);
            return;
        }
        let term = self.start_termination(txn, Role::Participant, attempt, targets, out);
        let state = self.participants.get_mut(&txn).unwrap();
        state.phase = ParticipantPhase::Terminating;
        state.termination = Some(term);
    }

    #[allow(clippy::too_many_arguments)]
    fn on_termination_reply(
        &mut self,
        now: VirtualTime,
        txn: TxnId,
        role: Role,
        attempt: u32,
        target: NodeId,
        state: LogState,
        out: &mut Vec<Effect>,
    ) {
        let decided = match role {
            Role::Coordinator => self
                .coordinators
                .get_mut(&txn)
                .filter(|s| s.phase == CoordinatorPhase::Terminating)
                .and_then(|s| s.termination.as_mut())
                .filter(|t| t.attempt == attempt)
                .and_then(|t| t.on_reply(target, state)),
            Role::Participant => self
                .participants
                .get_mut(&txn)
                .filter(|s| s.phase == ParticipantPhase::Terminating)
                .and_then(|s| s.termination.as_mut())
                .filter(|t| t.attempt == attempt)
                .and_then(|t| t.on_reply(target, state)),
        };
        if let Some(d) = decided {
            match role {
                Role::Coordinator => self.coordinator_decide(now, txn, d, out),
                Role::Participant => self.participant_learn(now, txn, d, out),
            }
        }
    }

    // ---- participant ----

    fn participant_join(&mut self, txn: Arc<Transaction>, vote_yes: bool, out: &mut Vec<Effect>) {
        if self.participants.contains_key(&txn.id) {
            return;
        }
        out.push(Effect::SetTimer { key: TimerKey::new(txn.id, TimerKind::VoteReq), after_us: self.cfg.timeouts.vote_req_us });
        self.participants.insert(
            txn.id,
            ParticipantState {
                txn,
                phase: ParticipantPhase::AwaitingVoteReq,
                vote_yes,
                local_vote: None,
                final_decision: None,
                early_decision: None,
                termination: None,
            },
        );
    }

    fn participant_on_vote_req(&mut self, txn: TxnId, from: NodeId, out: &mut Vec<Effect>) {
        let own_log = self.own_log();
        let Some(state) = self.participants.get_mut(&txn) else {
            return;
        };
        if state.phase != ParticipantPhase::AwaitingVoteReq {
            // Late VOTE-REQ after a unilateral abort: the slot already holds
            // ABORT, nothing to do.
            return;
        }
        out.push(Effect::CancelTimer(TimerKey::new(txn, TimerKind::VoteReq)));
        if state.vote_yes {
            state.phase = ParticipantPhase::LoggingVote;
            self.requests.issue(StorageOp::log_once(own_log, txn, RecordType::VoteYes), Purpose::VoteLog(txn), out);
        } else {
            state.local_vote = Some(Vote::Abort);
            self.requests.issue(StorageOp::log(own_log, txn, RecordType::Abort), Purpose::AsyncAbort(txn), out);
            out.push(Effect::Send { to: from, msg: Message::VoteResp { txn, vote: Vote::Abort } });
            self.participant_finish(txn, Decision::Abort, true, out);
        }
    }

    fn participant_on_vote_logged(&mut self, now: VirtualTime, txn: TxnId, state_after: LogState, out: &mut Vec<Effect>) {
        let Some(state) = self.participants.get_mut(&txn) else {
            return;
        };
        if state.phase != ParticipantPhase::LoggingVote {
            return;
        }
        let coordinator = state.txn.coordinator;
        match state_after {
            LogState::VoteYes => {
                state.local_vote = Some(Vote::Yes);
                out.push(Effect::Send { to: coordinator, msg: Message::VoteResp { txn, vote: Vote::Yes } });
                if let Some(d) = state.early_decision.take() {
                    self.participant_learn(now, txn, d, out);
                    return;
                }
                state.phase = ParticipantPhase::AwaitingDecision;
                out.push(Effect::SetTimer { key: TimerKey::new(txn, TimerKind::Decision), after_us: self.cfg.timeouts.decision_us });
            }
            LogState::Aborted => {
                // Another node already logged ABORT on our behalf.
                state.local_vote = Some(Vote::Abort);
                out.push(Effect::Send { to: coordinator, msg: Message::VoteResp { txn, vote: Vote::Abort } });
                self.participant_finish(txn, Decision::Abort, true, out);
            }
            other => out.push(Effect::Fault { txn, detail: format!("vote log_once returned {other}") }),
        }
    }

    fn participant_on_decision(&mut self, now: VirtualTime, txn: TxnId, decision: Decision, out: &mut Vec<Effect>) {
        let Some(state) = self.participants.get_mut(&txn) else {
            return;
        };
        match state.phase {
            ParticipantPhase::AwaitingDecision | ParticipantPhase::Terminating => self.participant_learn(now, txn, decision, out),
            ParticipantPhase::LoggingVote => state.early_decision = Some(decision),
            _ => {}
        }
    }

    /// Adopts a decision learned from the coordinator or the termination
    /// protocol and records it in the participant's own log.
    fn participant_learn(&mut self, _now: VirtualTime, txn: TxnId, decision: Decision, out: &mut Vec<Effect>) {
        let own_log = self.own_log();
        let Some(state) = self.participants.get_mut(&txn) else {
            return;
        };
        if state.phase == ParticipantPhase::Done {
            return;
        }
        state.termination = None;
        out.push(Effect::CancelTimer(TimerKey::new(txn, TimerKind::Decision)));
        out.push(Effect::CancelTimer(TimerKey::new(txn, TimerKind::Termination)));
        self.requests.forget(|p| matches!(p, Purpose::Terminate { txn: t, role: Role::Participant, .. } if *t == txn));
        self.requests.issue(StorageOp::log(own_log, txn, decision.record()), Purpose::DecisionLog(txn), out);
        self.participant_finish(txn, decision, false, out);
    }

    fn participant_finish(&mut self, txn: TxnId, decision: Decision, release: bool, out: &mut Vec<Effect>) {
        let Some(state) = self.participants.get_mut(&txn) else {
            return;
        };
        state.phase = ParticipantPhase::Done;
        state.final_decision = Some(decision);
        out.push(Effect::Decide { txn, decision });
        if release {
            out.push(Effect::Release { txn });
        }
    }

    fn participant_vote_req_timeout(&mut self, txn: TxnId, out: &mut Vec<Effect>) {
        let own_log = self.own_log();
        let Some(state) = self.participants.get_mut(&txn) else {
            return;
        };
        if state.phase != ParticipantPhase::AwaitingVoteReq {
            return;
        }
        state.phase = ParticipantPhase::AbortingUnilaterally;
        state.local_vote = Some(Vote::Abort);
        self.requests.issue(StorageOp::log(own_log, txn, RecordType::Abort), Purpose::UnilateralAbort(txn), out);
    }

    fn participant_release(&mut self, txn: TxnId, out: &mut Vec<Effect>) {
        if let Some(state) = self.participants.get(&txn) {
            if state.phase == ParticipantPhase::AwaitingVoteReq {
                self.participants.remove(&txn);
                out.push(Effect::CancelTimer(TimerKey::new(txn, TimerKind::VoteReq)));
                out.push(Effect::Release { txn });
                out.push(Effect::Leave { txn });
            }
        }
    }

    fn recover(&mut self, txns: Vec<Arc<Transaction>>, out: &mut Vec<Effect>) {
        // The coordinator keeps no state and has nothing to do.
        let own_log = self.own_log();
        for txn in txns {
            if !txn.participants.contains(&self.id) || (txn.read_only && self.cfg.ro_known_in_advance) {
                continue;
            }
            let id = txn.id;
            self.participants.insert(
                id,
                ParticipantState {
                    txn,
                    phase: ParticipantPhase::Recovering,
                    vote_yes: false,
                    local_vote: None,
                    final_decision: None,
                    early_decision: None,
                    termination: None,
                },
            );
            self.requests.issue(StorageOp::read(own_log, id), Purpose::RecoverRead(id), out);
        }
    }

    fn on_recover_read(&mut self, now: VirtualTime, txn: TxnId, state_after: LogState, out: &mut Vec<Effect>) {
        let own_log = self.own_log();
        match state_after {
            LogState::None => {
                self.requests.issue(StorageOp::log(own_log, txn, RecordType::Abort), Purpose::AsyncAbort(txn), out);
                self.participant_finish(txn, Decision::Abort, true, out);
            }
            LogState::Aborted => self.participant_finish(txn, Decision::Abort, true, out),
            LogState::Committed => self.participant_finish(txn, Decision::Commit, true, out),
            LogState::VoteYes => {
                if let Some(s) = self.participants.get_mut(&txn) {
                    s.local_vote = Some(Vote::Yes);
                }
                self.participant_terminate(now, txn, 0, out);
            }
        }
    }

    fn on_storage(&mut self, now: VirtualTime, req: ReqId, reply: StorageReply, out: &mut Vec<Effect>) {
        let Some((op, purpose)) = self.requests.complete(req) else {
            return;
        };
        let state_after = match reply {
            Ok(s) => s,
            Err(StorageError::Unavailable(_)) => {
                self.requests.issue(op, purpose, out);
                return;
            }
            Err(e) => {
                out.push(Effect::Fault { txn: op.txn, detail: e.to_string() });
                return;
            }
        };
        match purpose {
            Purpose::VoteLog(txn) => self.participant_on_vote_logged(now, txn, state_after, out),
            Purpose::UnilateralAbort(txn) => {
                if self.participants.get(&txn).is_some_and(|s| s.phase == ParticipantPhase::AbortingUnilaterally) {
                    self.participant_finish(txn, Decision::Abort, true, out);
                }
            }
            Purpose::AsyncAbort(_) => {}
            Purpose::DecisionLog(txn) => out.push(Effect::Release { txn }),
            Purpose::Terminate { txn, role, attempt, target } => {
                self.on_termination_reply(now, txn, role, attempt, target, state_after, out)
            }
            Purpose::RecoverRead(txn) => self.on_recover_read(now, txn, state_after, out),
        }
    }

    fn on_timer(&mut self, now: VirtualTime, key: TimerKey, out: &mut Vec<Effect>) {
        let txn = key.txn;
        match key.kind {
            TimerKind::Votes => {
                if self.coordinators.get(&txn).is_some_and(|s| s.phase == CoordinatorPhase::AwaitingVotes) {
                    self.coordinator_terminate(txn, 0, out);
                }
            }
            TimerKind::CoordinatorTermination => {
                let attempt = self
                    .coordinators
                    .get(&txn)
                    .filter(|s| s.phase == CoordinatorPhase::Terminating)
                    .and_then(|s| s.termination.as_ref())
                    .map(|t| t.attempt + 1);
                if let Some(attempt) = attempt {
                    self.coordinator_terminate(txn, attempt, out);
                }
            }
            TimerKind::VoteReq => self.participant_vote_req_timeout(txn, out),
            TimerKind::Decision => {
                if self.participants.get(&txn).is_some_and(|s| s.phase == ParticipantPhase::AwaitingDecision) {
                    self.participant_terminate(now, txn, 0, out);
                }
            }
            TimerKind::Termination => {
                let attempt = self
                    .participants
                    .get(&txn)
                    .filter(|s| s.phase == ParticipantPhase::Terminating)
                    .and_then(|s| s.termination.as_ref())
                    .map(|t| t.attempt + 1);
                if let Some(attempt) = attempt {
                    self.participant_terminate(now, txn, attempt, out);
                }
            }
            TimerKind::Query => {}
        }
    }
}

impl CommitProtocol for CornusNode {
    fn node(&self) -> NodeId {
        self.id
    }

    fn handle(&mut self, now: VirtualTime, input: Input, out: &mut Vec<Effect>) {
        match input {
            Input::Begin(txn) => self.coordinator_start(now, txn, out),
            Input::Join { txn, vote_yes } => self.participant_join(txn, vote_yes, out),
            Input::Message { from, msg } => match msg {
                Message::VoteReq { txn, .. } => self.participant_on_vote_req(txn, from, out),
                Message::VoteResp { txn, vote } => self.coordinator_on_vote(now, from, txn, vote, out),
                Message::Decision { txn, decision } => self.participant_on_decision(now, txn, decision, out),
                Message::Release { txn } => self.participant_release(txn, out),
                _ => {}
            },
            Input::Timer(key) => self.on_timer(now, key, out),
            Input::Storage { req, reply } => self.on_storage(now, req, reply, out),
            Input::Recover { txns } => self.recover(txns, out),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::node::Timeouts;
    use crate::storage::{MemoryStore, Origin};
    use crate::types::Access;

    const COORD: NodeId = NodeId(0);
    const P1: NodeId = NodeId(1);
    const P2: NodeId = NodeId(2);

    fn txn(parts: &[NodeId]) -> Arc<Transaction> {
        let acc = parts.iter().map(|&p| (p, vec![Access::write(p.0 as u64)])).collect();
        Arc::new(Transaction::new(TxnId::new(COORD, 1), acc).unwrap())
    }

    fn cfg() -> ProtocolConfig {
        ProtocolConfig::new(Timeouts::derived(250, 1000))
    }

    fn run(node: &mut CornusNode, input: Input) -> Vec<Effect> {
        let mut out = Vec::new();
        node.handle(VirtualTime(0), input, &mut out);
        out
    }

    /// Executes every storage effect against `store` and feeds the replies back.
    fn drain_storage(node: &mut CornusNode, store: &MemoryStore, mut effects: Vec<Effect>) -> Vec<Effect> {
        let mut rest = Vec::new();
        while let Some(e) = effects.pop() {
            if let Effect::Storage { req, op } = e {
                let reply = store.apply(&op, Origin::new(node.id, VirtualTime(0))).reply;
                effects.extend(run(node, Input::Storage { req, reply }));
            } else {
                rest.push(e);
            }
        }
        rest
    }

    fn decisions(effects: &[Effect]) -> Vec<Decision> {
        effects
            .iter()
            .filter_map(|e| match e {
                Effect::Decide { decision, .. } => Some(*decision),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn coordinator_commits_on_all_yes_without_storage_writes() {
        let t = txn(&[P1, P2]);
        let mut c = CornusNode::new(COORD, cfg());
        let out = run(&mut c, Input::Begin(Arc::clone(&t)));
        assert_eq!(out.iter().filter(|e| matches!(e, Effect::Send { .. })).count(), 2);
        let yes = |from| Input::Message { from, msg: Message::VoteResp { txn: t.id, vote: Vote::Yes } };
        assert!(decisions(&run(&mut c, yes(P1))).is_empty());
        let out = run(&mut c, yes(P2));
        assert_eq!(decisions(&out), vec![Decision::Commit]);
        assert!(out.iter().any(|e| matches!(e, Effect::Reply { decision: Decision::Commit, .. })));
        assert!(!out.iter().any(|e| matches!(e, Effect::Storage { .. })));
        assert_eq!(c.coordinator_state(t.id).unwrap().phase, CoordinatorPhase::Decided);
    }

    #[test]
    fn coordinator_aborts_on_first_abort() {
        let t = txn(&[P1, P2]);
        let mut c = CornusNode::new(COORD, cfg());
        run(&mut c, Input::Begin(Arc::clone(&t)));
        let out = run(&mut c, Input::Message { from: P1, msg: Message::VoteResp { txn: t.id, vote: Vote::Abort } });
        assert_eq!(decisions(&out), vec![Decision::Abort]);
    }

    #[test]
    fn coordinator_timeout_aborts_silent_participant() {
        let t = txn(&[P1, P2]);
        let store = MemoryStore::new();
        store.apply(&StorageOp::log_once(LogId::participant(P2), t.id, RecordType::VoteYes), Origin::new(P2, VirtualTime(0)));
        let mut c = CornusNode::new(COORD, cfg());
        run(&mut c, Input::Begin(Arc::clone(&t)));
        run(&mut c, Input::Message { from: P2, msg: Message::VoteResp { txn: t.id, vote: Vote::Yes } });
        let out = run(&mut c, Input::Timer(TimerKey::new(t.id, TimerKind::Votes)));
        let rest = drain_storage(&mut c, &store, out);
        assert_eq!(decisions(&rest), vec![Decision::Abort]);
        assert_eq!(store.slot(LogId::participant(P1), t.id).state(), LogState::Aborted);
        assert_eq!(store.slot(LogId::participant(P2), t.id).state(), LogState::VoteYes);
    }

    #[test]
    fn yes_voter_logs_then_replies() {
        let t = txn(&[P1, P2]);
        let store = MemoryStore::new();
        let mut p = CornusNode::new(P1, cfg());
        run(&mut p, Input::Join { txn: Arc::clone(&t), vote_yes: true });
        let out = run(&mut p, Input::Message { from: COORD, msg: Message::VoteReq { txn: t.id, participants: vec![P1, P2] } });
        let rest = drain_storage(&mut p, &store, out);
        assert!(rest.contains(&Effect::Send { to: COORD, msg: Message::VoteResp { txn: t.id, vote: Vote::Yes } }));
        assert_eq!(store.slot(LogId::participant(P1), t.id).state(), LogState::VoteYes);
        assert_eq!(p.participant_state(t.id).unwrap().phase, ParticipantPhase::AwaitingDecision);
    }

    #[test]
    fn yes_voter_finds_abort_already_logged() {
        let t = txn(&[P1, P2]);
        let store = MemoryStore::new();
        store.apply(&StorageOp::log_once(LogId::participant(P1), t.id, RecordType::Abort), Origin::new(P2, VirtualTime(0)));
        let mut p = CornusNode::new(P1, cfg());
        run(&mut p, Input::Join { txn: Arc::clone(&t), vote_yes: true });
        let out = run(&mut p, Input::Message { from: COORD, msg: Message::VoteReq { txn: t.id, participants: vec![P1, P2] } });
        let rest = drain_storage(&mut p, &store, out);
        assert!(rest.contains(&Effect::Send { to: COORD, msg: Message::VoteResp { txn: t.id, vote: Vote::Abort } }));
        assert_eq!(decisions(&rest), vec![Decision::Abort]);
    }

    #[test]
    fn no_voter_replies_abort_immediately() {
        let t = txn(&[P1, P2]);
        let mut p = CornusNode::new(P1, cfg());
        run(&mut p, Input::Join { txn: Arc::clone(&t), vote_yes: false });
        let out = run(&mut p, Input::Message { from: COORD, msg: Message::VoteReq { txn: t.id, participants: vec![P1, P2] } });
        let send_pos = out.iter().position(|e| matches!(e, Effect::Send { .. })).unwrap();
        let store_pos = out.iter().position(|e| matches!(e, Effect::Storage { .. })).unwrap();
        assert!(store_pos < send_pos);
        assert_eq!(decisions(&out), vec![Decision::Abort]);
    }

    #[test]
    fn unilateral_abort_then_late_vote_req_is_ignored() {
        let t = txn(&[P1]);
        let store = MemoryStore::new();
        let mut p = CornusNode::new(P1, cfg());
        run(&mut p, Input::Join { txn: Arc::clone(&t), vote_yes: true });
        let out = run(&mut p, Input::Timer(TimerKey::new(t.id, TimerKind::VoteReq)));
        let rest = drain_storage(&mut p, &store, out);
        assert_eq!(decisions(&rest), vec![Decision::Abort]);
        let late = run(&mut p, Input::Message { from: COORD, msg: Message::VoteReq { txn: t.id, participants: vec![P1] } });
        assert!(late.is_empty());
        assert_eq!(store.slot(LogId::participant(P1), t.id).state(), LogState::Aborted);
    }

    fn voted_participant(t: &Arc<Transaction>, store: &MemoryStore) -> CornusNode {
        let mut p = CornusNode::new(P1, cfg());
        run(&mut p, Input::Join { txn: Arc::clone(t), vote_yes: true });
        let out = run(
            &mut p,
            Input::Message { from: COORD, msg: Message::VoteReq { txn: t.id, participants: t.participants.iter().copied().collect() } },
        );
        drain_storage(&mut p, store, out);
        p
    }

    #[test]
    fn termination_learns_commit_from_votes() {
        let t = txn(&[P1, P2]);
        let store = MemoryStore::new();
        store.apply(&StorageOp::log_once(LogId::participant(P2), t.id, RecordType::VoteYes), Origin::new(P2, VirtualTime(0)));
        let mut p = voted_participant(&t, &store);
        let out = run(&mut p, Input::Timer(TimerKey::new(t.id, TimerKind::Decision)));
        let rest = drain_storage(&mut p, &store, out);
        assert_eq!(decisions(&rest), vec![Decision::Commit]);
        assert_eq!(store.slot(LogId::participant(P1), t.id).state(), LogState::Committed);
    }

    #[test]
    fn termination_aborts_missing_vote() {
        let t = txn(&[P1, P2]);
        let store = MemoryStore::new();
        let mut p = voted_participant(&t, &store);
        let out = run(&mut p, Input::Timer(TimerKey::new(t.id, TimerKind::Decision)));
        let rest = drain_storage(&mut p, &store, out);
        assert_eq!(decisions(&rest), vec![Decision::Abort]);
        assert_eq!(store.slot(LogId::participant(P2), t.id).state(), LogState::Aborted);
        assert_eq!(store.slot(LogId::participant(P1), t.id).state(), LogState::Aborted);
    }

    #[test]
    fn termination_adopts_committed_peer() {
        let t = txn(&[P1, P2]);
        let store = MemoryStore::new();
        let l2 = LogId::participant(P2);
        store.apply(&StorageOp::log_once(l2, t.id, RecordType::VoteYes), Origin::new(P2, VirtualTime(0)));
        store.apply(&StorageOp::log(l2, t.id, RecordType::Commit), Origin::new(P2, VirtualTime(0)));
        let mut p = voted_participant(&t, &store);
        let out = run(&mut p, Input::Timer(TimerKey::new(t.id, TimerKind::Decision)));
        assert_eq!(decisions(&drain_storage(&mut p, &store, out)), vec![Decision::Commit]);
    }

    #[test]
    fn termination_retries_on_timeout() {
        let t = txn(&[P1, P2]);
        let store = MemoryStore::new();
        let mut p = voted_participant(&t, &store);
        let first = run(&mut p, Input::Timer(TimerKey::new(t.id, TimerKind::Decision)));
        assert_eq!(first.iter().filter(|e| matches!(e, Effect::Storage { .. })).count(), 1);
        // No reply: the round times out and is reissued.
        let second = run(&mut p, Input::Timer(TimerKey::new(t.id, TimerKind::Termination)));
        assert_eq!(second.iter().filter(|e| matches!(e, Effect::Storage { .. })).count(), 1);
        // A reply to the stale round is ignored.
        let stale = first
            .iter()
            .find_map(|e| match e {
                Effect::Storage { req, .. } => Some(*req),
                _ => None,
            })
            .unwrap();
        assert!(run(&mut p, Input::Storage { req: stale, reply: Ok(LogState::Aborted) }).is_empty());
        assert_eq!(decisions(&drain_storage(&mut p, &store, second)), vec![Decision::Abort]);
    }

    #[test]
    fn recovery_follows_own_slot() {
        let t = txn(&[P1, P2]);
        let l1 = LogId::participant(P1);

        // NONE: abort.
        let store = MemoryStore::new();
        let mut p = CornusNode::new(P1, cfg());
        let out = run(&mut p, Input::Recover { txns: vec![Arc::clone(&t)] });
        assert_eq!(decisions(&drain_storage(&mut p, &store, out)), vec![Decision::Abort]);

        // COMMITTED: follow it with no other storage traffic.
        let store = MemoryStore::new();
        store.apply(&StorageOp::log_once(l1, t.id, RecordType::VoteYes), Origin::new(P1, VirtualTime(0)));
        store.apply(&StorageOp::log(l1, t.id, RecordType::Commit), Origin::new(P1, VirtualTime(0)));
        let mut p = CornusNode::new(P1, cfg());
        let out = run(&mut p, Input::Recover { txns: vec![Arc::clone(&t)] });
        assert_eq!(out.iter().filter(|e| matches!(e, Effect::Storage { .. })).count(), 1);
        let rest = drain_storage(&mut p, &store, out);
        assert_eq!(decisions(&rest), vec![Decision::Commit]);
        assert!(!rest.iter().any(|e| matches!(e, Effect::Send { .. })));

        // VOTE_YES with an aborted peer: termination finds the abort.
        let store = MemoryStore::new();
        store.apply(&StorageOp::log_once(l1, t.id, RecordType::VoteYes), Origin::new(P1, VirtualTime(0)));
        store.apply(&StorageOp::log_once(LogId::participant(P2), t.id, RecordType::Abort), Origin::new(COORD, VirtualTime(0)));
        let mut p = CornusNode::new(P1, cfg());
        let out = run(&mut p, Input::Recover { txns: vec![Arc::clone(&t)] });
        assert_eq!(decisions(&drain_storage(&mut p, &store, out)), vec![Decision::Abort]);
    }

    #[test]
    fn decision_during_vote_write_is_applied_after_it() {
        let t = txn(&[P1, P2]);
        let store = MemoryStore::new();
        let mut p = CornusNode::new(P1, cfg());
        run(&mut p, Input::Join { txn: Arc::clone(&t), vote_yes: true });
        let out = run(&mut p, Input::Message { from: COORD, msg: Message::VoteReq { txn: t.id, participants: vec![P1, P2] } });
        let early = run(&mut p, Input::Message { from: COORD, msg: Message::Decision { txn: t.id, decision: Decision::Abort } });
        assert!(early.is_empty());
        let rest = drain_storage(&mut p, &store, out);
        assert_eq!(decisions(&rest), vec![Decision::Abort]);
        assert_eq!(store.slot(LogId::participant(P1), t.id).state(), LogState::Aborted);
    }

    #[test]
    fn read_only_known_in_advance_skips_protocol() {
        let acc = [(P1, vec![Access::read(1)]), (P2, vec![Access::read(2)])].into_iter().collect();
        let t = Arc::new(Transaction::new(TxnId::new(COORD, 9), acc).unwrap());
        let mut c = CornusNode::new(COORD, cfg());
        let out = run(&mut c, Input::Begin(t));
        assert!(out.iter().any(|e| matches!(e, Effect::Reply { decision: Decision::Commit, .. })));
        assert!(!out.iter().any(|e| matches!(e, Effect::Begin { .. } | Effect::Decide { .. })));
    }
}
