//! Baseline two-phase commit over disaggregated storage, with presumed abort.
//!
//! The coordinator's decision record lives in the same storage service as
//! the participant logs. A participant that voted yes and stops hearing from
//! the coordinator is uncertain: in naive mode it asks only the coordinator,
//! in cooperative mode it also asks its peers. If nobody knows the outcome it
//! waits for the coordinator to come back.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::message::{Message, PeerOutcome, Vote};
use crate::node::{CommitProtocol, Effect, Input, ProtocolConfig, ReqId, Requests, TerminationMode, TimerKey, TimerKind};
use crate::storage::{StorageError, StorageOp, StorageReply};
use crate::types::{Decision, LogId, LogState, NodeId, RecordType, Transaction, TxnId, VirtualTime};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TwoPcCoordinatorPhase {
    AwaitingVotes,
    LoggingDecision,
    /// Restarted; reading its own decision record.
    Recovering,
    Decided,
}

#[derive(Clone, Debug)]
pub struct TwoPcCoordinatorState {
    pub txn: Arc<Transaction>,
    pub phase: TwoPcCoordinatorPhase,
    pub votes: BTreeMap<NodeId, Option<Vote>>,
    pub decision: Option<Decision>,
    pub decision_logged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TwoPcParticipantPhase {
    AwaitingVoteReq,
    AbortingUnilaterally,
    LoggingVote,
    AwaitingDecision,
    /// Asking the coordinator (and peers) for the outcome.
    Querying,
    /// Out of query rounds; waiting for the coordinator's rebroadcast.
    Blocked,
    Recovering,
    /// Read-only here; left after voting.
    Left,
    Done,
}

#[derive(Clone, Debug)]
pub struct TwoPcParticipantState {
    pub txn: Arc<Transaction>,
    pub phase: TwoPcParticipantPhase,
    pub vote_yes: bool,
    pub final_decision: Option<Decision>,
    early_decision: Option<Decision>,
    query_round: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Purpose {
    VoteLog(TxnId),
    UnilateralAbort(TxnId),
    AsyncAbort(TxnId),
    CommitRecord(TxnId),
    DecisionLog(TxnId),
    RecoverCoordinator(TxnId),
    RecoverParticipant(TxnId),
    /// A participant asked about a transaction this coordinator no longer
    /// holds in memory; answer from the decision record.
    AnswerQuery(TxnId, NodeId),
}

#[derive(Debug)]
pub struct TwoPcNode {
    id: NodeId,
    cfg: ProtocolConfig,
    mode: TerminationMode,
    coordinators: BTreeMap<TxnId, TwoPcCoordinatorState>,
    participants: BTreeMap<TxnId, TwoPcParticipantState>,
    requests: Requests<Purpose>,
}

impl TwoPcNode {
    pub fn new(id: NodeId, cfg: ProtocolConfig, mode: TerminationMode) -> Self {
        TwoPcNode { id, cfg, mode, coordinators: BTreeMap::new(), participants: BTreeMap::new(), requests: Requests::new() }
    }

    pub fn coordinator_state(&self, txn: TxnId) -> Option<&TwoPcCoordinatorState> {
        self.coordinators.get(&txn)
    }

    pub fn participant_state(&self, txn: TxnId) -> Option<&TwoPcParticipantState> {
        self.participants.get(&txn)
    }

    fn own_log(&self) -> LogId {
        LogId::participant(self.id)
    }

    fn decision_log(&self) -> LogId {
        LogId::coordinator(self.id)
    }

    // ---- coordinator ----

    fn coordinator_start(&mut self, txn: Arc<Transaction>, out: &mut Vec<Effect>) {
        if txn.read_only && self.cfg.ro_known_in_advance {
            out.push(Effect::Reply { txn: txn.id, decision: Decision::Commit });
            for &p in &txn.participants {
                out.push(Effect::Send { to: p, msg: Message::Release { txn: txn.id } });
            }
            return;
        }
        let participants: Vec<NodeId> = txn.participants.iter().copied().collect();
        out.push(Effect::Begin { txn: txn.id, participants: participants.clone() });
        for &p in &participants {
            out.push(Effect::Send { to: p, msg: Message::VoteReq { txn: txn.id, participants: participants.clone() } });
        }
        out.push(Effect::SetTimer { key: TimerKey::new(txn.id, TimerKind::Votes), after_us: self.cfg.timeouts.votes_us });
        self.coordinators.insert(
            txn.id,
            TwoPcCoordinatorState {
                votes: participants.iter().map(|&p| (p, None)).collect(),
                txn,
                phase: TwoPcCoordinatorPhase::AwaitingVotes,
                decision: None,
                decision_logged: false,
            },
        );
    }

    fn coordinator_on_vote(&mut self, from: NodeId, txn: TxnId, vote: Vote, out: &mut Vec<Effect>) {
        let decision_log = self.decision_log();
        let Some(state) = self.coordinators.get_mut(&txn) else {
            return;
        };
        if state.phase != TwoPcCoordinatorPhase::AwaitingVotes || !state.votes.contains_key(&from) {
            return;
        }
        state.votes.insert(from, Some(vote));
        if vote == Vote::Abort {
            self.coordinator_abort(txn, out);
            return;
        }
        if state.votes.values().any(Option::is_none) {
            return;
        }
        out.push(Effect::CancelTimer(TimerKey::new(txn, TimerKind::Votes)));
        out.push(Effect::PrepareDone { txn });
        if state.votes.values().all(|v| *v == Some(Vote::ReadOnly)) {
            // Nothing to make durable.
            self.coordinator_decide(txn, Decision::Commit, true, out);
        } else {
            state.phase = TwoPcCoordinatorPhase::LoggingDecision;
            self.requests.issue(StorageOp::log(decision_log, txn, RecordType::Commit), Purpose::CommitRecord(txn), out);
        }
    }

    /// Presumed abort: the ABORT record is written lazily.
    fn coordinator_abort(&mut self, txn: TxnId, out: &mut Vec<Effect>) {
        let decision_log = self.decision_log();
        out.push(Effect::CancelTimer(TimerKey::new(txn, TimerKind::Votes)));
        out.push(Effect::PrepareDone { txn });
        self.requests.issue(StorageOp::log(decision_log, txn, RecordType::Abort), Purpose::AsyncAbort(txn), out);
        self.coordinator_decide(txn, Decision::Abort, true, out);
    }

    fn coordinator_decide(&mut self, txn: TxnId, decision: Decision, reply: bool, out: &mut Vec<Effect>) {
        let Some(state) = self.coordinators.get_mut(&txn) else {
            return;
        };
        state.phase = TwoPcCoordinatorPhase::Decided;
        state.decision = Some(decision);
        out.push(Effect::Decide { txn, decision });
        if reply {
            out.push(Effect::Reply { txn, decision });
        }
        for (&p, vote) in &state.votes {
            if *vote != Some(Vote::ReadOnly) {
                out.push(Effect::Send { to: p, msg: Message::Decision { txn, decision } });
            }
        }
    }

    fn coordinator_on_query(&mut self, from: NodeId, txn: TxnId, out: &mut Vec<Effect>) {
        let outcome = match self.coordinators.get(&txn) {
            Some(s) => s.decision.map_or(PeerOutcome::Uncertain, PeerOutcome::from),
            None => {
                let decision_log = self.decision_log();
                self.requests.issue(StorageOp::read(decision_log, txn), Purpose::AnswerQuery(txn, from), out);
                return;
            }
        };
        out.push(Effect::Send { to: from, msg: Message::DecisionResp { txn, outcome } });
    }

    fn answer_from_record(&mut self, txn: TxnId, to: NodeId, state: LogState, out: &mut Vec<Effect>) {
        let outcome = match state {
            LogState::Committed => PeerOutcome::Commit,
            LogState::Aborted => PeerOutcome::Abort,
            _ => {
                // Presumed abort; make it durable so a retried query agrees.
                let decision_log = self.decision_log();
                self.requests.issue(StorageOp::log(decision_log, txn, RecordType::Abort), Purpose::AsyncAbort(txn), out);
                PeerOutcome::Abort
            }
        };
        out.push(Effect::Send { to, msg: Message::DecisionResp { txn, outcome } });
    }

    // ---- participant ----

    fn participant_join(&mut self, txn: Arc<Transaction>, vote_yes: bool, out: &mut Vec<Effect>) {
        if self.participants.contains_key(&txn.id) {
            return;
        }
        out.push(Effect::SetTimer { key: TimerKey::new(txn.id, TimerKind::VoteReq), after_us: self.cfg.timeouts.vote_req_us });
        self.participants.insert(
            txn.id,
            TwoPcParticipantState {
                txn,
                phase: TwoPcParticipantPhase::AwaitingVoteReq,
                vote_yes,
                final_decision: None,
                early_decision: None,
                query_round: 0,
            },
        );
    }

    fn participant_on_vote_req(&mut self, from: NodeId, txn: TxnId, out: &mut Vec<Effect>) {
        let own_log = self.own_log();
        let id = self.id;
        let Some(state) = self.participants.get_mut(&txn) else {
            return;
        };
        match state.phase {
            TwoPcParticipantPhase::AwaitingVoteReq => {}
            TwoPcParticipantPhase::Done if state.final_decision == Some(Decision::Abort) => {
                out.push(Effect::Send { to: from, msg: Message::VoteResp { txn, vote: Vote::Abort } });
                return;
            }
            _ => return,
        }
        out.push(Effect::CancelTimer(TimerKey::new(txn, TimerKind::VoteReq)));
        if state.vote_yes && state.txn.is_read_only_at(id) {
            state.phase = TwoPcParticipantPhase::Left;
            out.push(Effect::Send { to: from, msg: Message::VoteResp { txn, vote: Vote::ReadOnly } });
            out.push(Effect::Release { txn });
            out.push(Effect::Leave { txn });
        } else if state.vote_yes {
            state.phase = TwoPcParticipantPhase::LoggingVote;
            self.requests.issue(StorageOp::log(own_log, txn, RecordType::VoteYes), Purpose::VoteLog(txn), out);
        } else {
            self.requests.issue(StorageOp::log(own_log, txn, RecordType::Abort), Purpose::AsyncAbort(txn), out);
            out.push(Effect::Send { to: from, msg: Message::VoteResp { txn, vote: Vote::Abort } });
            self.participant_finish(txn, Decision::Abort, true, out);
        }
    }

    fn participant_on_vote_logged(&mut self, txn: TxnId, out: &mut Vec<Effect>) {
        let Some(state) = self.participants.get_mut(&txn) else {
            return;
        };
        if state.phase != TwoPcParticipantPhase::LoggingVote {
            return;
        }
        out.push(Effect::Send { to: state.txn.coordinator, msg: Message::VoteResp { txn, vote: Vote::Yes } });
        if let Some(d) = state.early_decision.take() {
            self.participant_learn(txn, d, out);
            return;
        }
        state.phase = TwoPcParticipantPhase::AwaitingDecision;
        out.push(Effect::SetTimer { key: TimerKey::new(txn, TimerKind::Decision), after_us: self.cfg.timeouts.decision_us });
    }

    fn participant_on_decision(&mut self, txn: TxnId, decision: Decision, out: &mut Vec<Effect>) {
        let own_log = self.own_log();
        let Some(state) = self.participants.get_mut(&txn) else {
            return;
        };
        match state.phase {
            TwoPcParticipantPhase::AwaitingDecision | TwoPcParticipantPhase::Querying | TwoPcParticipantPhase::Blocked => {
                self.participant_learn(txn, decision, out)
            }
            TwoPcParticipantPhase::LoggingVote => state.early_decision = Some(decision),
            TwoPcParticipantPhase::AwaitingVoteReq if decision == Decision::Abort => {
                out.push(Effect::CancelTimer(TimerKey::new(txn, TimerKind::VoteReq)));
                self.requests.issue(StorageOp::log(own_log, txn, RecordType::Abort), Purpose::AsyncAbort(txn), out);
                self.participant_finish(txn, Decision::Abort, true, out);
            }
            _ => {}
        }
    }

    fn participant_learn(&mut self, txn: TxnId, decision: Decision, out: &mut Vec<Effect>) {
        let own_log = self.own_log();
        out.push(Effect::CancelTimer(TimerKey::new(txn, TimerKind::Decision)));
        out.push(Effect::CancelTimer(TimerKey::new(txn, TimerKind::Query)));
        self.requests.issue(StorageOp::log(own_log, txn, decision.record()), Purpose::DecisionLog(txn), out);
        self.participant_finish(txn, decision, false, out);
    }

    fn participant_finish(&mut self, txn: TxnId, decision: Decision, release: bool, out: &mut Vec<Effect>) {
        let Some(state) = self.participants.get_mut(&txn) else {
            return;
        };
        state.phase = TwoPcParticipantPhase::Done;
        state.final_decision = Some(decision);
        out.push(Effect::Decide { txn, decision });
        if release {
            out.push(Effect::Release { txn });
        }
    }

    fn participant_query(&mut self, txn: TxnId, out: &mut Vec<Effect>) {
        let id = self.id;
        let mode = self.mode;
        let Some(state) = self.participants.get_mut(&txn) else {
            return;
        };
        state.phase = TwoPcParticipantPhase::Querying;
        state.query_round += 1;
        let coordinator = state.txn.coordinator;
        let mut targets = vec![coordinator];
        if mode == TerminationMode::Cooperative {
            targets.extend(state.txn.participants.iter().copied().filter(|&p| p != id && p != coordinator));
        }
        for to in targets {
            if to != id {
                out.push(Effect::Send { to, msg: Message::DecisionReq { txn } });
            }
        }
        out.push(Effect::SetTimer { key: TimerKey::new(txn, TimerKind::Query), after_us: self.cfg.timeouts.termination_us });
    }

    fn participant_on_query(&mut self, from: NodeId, txn: TxnId, out: &mut Vec<Effect>) {
        let own_log = self.own_log();
        let outcome = match self.participants.get(&txn).map(|s| s.phase) {
            Some(TwoPcParticipantPhase::Done) => self.participants[&txn].final_decision.unwrap().into(),
            Some(TwoPcParticipantPhase::AwaitingVoteReq) => {
                // Never voted: abort now so the answer stays true.
                out.push(Effect::CancelTimer(TimerKey::new(txn, TimerKind::VoteReq)));
                self.requests.issue(StorageOp::log(own_log, txn, RecordType::Abort), Purpose::AsyncAbort(txn), out);
                self.participant_finish(txn, Decision::Abort, true, out);
                PeerOutcome::Abort
            }
            _ => PeerOutcome::Uncertain,
        };
        out.push(Effect::Send { to: from, msg: Message::DecisionResp { txn, outcome } });
    }

    fn participant_on_answer(&mut self, txn: TxnId, outcome: PeerOutcome, out: &mut Vec<Effect>) {
        let waiting = self.participants.get(&txn).is_some_and(|s| {
            matches!(s.phase, TwoPcParticipantPhase::AwaitingDecision | TwoPcParticipantPhase::Querying | TwoPcParticipantPhase::Blocked)
        });
        if !waiting {
            return;
        }
        match outcome {
            PeerOutcome::Commit => self.participant_learn(txn, Decision::Commit, out),
            PeerOutcome::Abort => self.participant_learn(txn, Decision::Abort, out),
            PeerOutcome::Uncertain => {}
        }
    }

    fn participant_release(&mut self, txn: TxnId, out: &mut Vec<Effect>) {
        if self.participants.get(&txn).is_some_and(|s| s.phase == TwoPcParticipantPhase::AwaitingVoteReq) {
            self.participants.remove(&txn);
            out.push(Effect::CancelTimer(TimerKey::new(txn, TimerKind::VoteReq)));
            out.push(Effect::Release { txn });
            out.push(Effect::Leave { txn });
        }
    }

    fn recover(&mut self, txns: Vec<Arc<Transaction>>, out: &mut Vec<Effect>) {
        let own_log = self.own_log();
        let decision_log = self.decision_log();
        for txn in txns {
            if txn.read_only && self.cfg.ro_known_in_advance {
                continue;
            }
            let id = txn.id;
            if txn.coordinator == self.id {
                self.coordinators.insert(
                    id,
                    TwoPcCoordinatorState {
                        votes: txn.participants.iter().map(|&p| (p, None)).collect(),
                        txn: Arc::clone(&txn),
                        phase: TwoPcCoordinatorPhase::Recovering,
                        decision: None,
                        decision_logged: false,
                    },
                );
                self.requests.issue(StorageOp::read(decision_log, id), Purpose::RecoverCoordinator(id), out);
            }
            if txn.participants.contains(&self.id) && !txn.is_read_only_at(self.id) {
                self.participants.insert(
                    id,
                    TwoPcParticipantState {
                        txn,
                        phase: TwoPcParticipantPhase::Recovering,
                        vote_yes: false,
                        final_decision: None,
                        early_decision: None,
                        query_round: 0,
                    },
                );
                self.requests.issue(StorageOp::read(own_log, id), Purpose::RecoverParticipant(id), out);
            }
        }
    }

    fn on_coordinator_recovered(&mut self, txn: TxnId, state_after: LogState, out: &mut Vec<Effect>) {
        let decision_log = self.decision_log();
        if !self.coordinators.get(&txn).is_some_and(|s| s.phase == TwoPcCoordinatorPhase::Recovering) {
            return;
        }
        match state_after {
            LogState::Committed => {
                self.coordinators.get_mut(&txn).unwrap().decision_logged = true;
                self.coordinator_decide(txn, Decision::Commit, false, out);
            }
            LogState::Aborted => self.coordinator_decide(txn, Decision::Abort, false, out),
            _ => {
                self.requests.issue(StorageOp::log(decision_log, txn, RecordType::Abort), Purpose::AsyncAbort(txn), out);
                self.coordinator_decide(txn, Decision::Abort, false, out);
            }
        }
    }

    fn on_participant_recovered(&mut self, txn: TxnId, state_after: LogState, out: &mut Vec<Effect>) {
        let own_log = self.own_log();
        if !self.participants.get(&txn).is_some_and(|s| s.phase == TwoPcParticipantPhase::Recovering) {
            return;
        }
        match state_after {
            LogState::None => {
                self.requests.issue(StorageOp::log(own_log, txn, RecordType::Abort), Purpose::AsyncAbort(txn), out);
                self.participant_finish(txn, Decision::Abort, true, out);
            }
            LogState::Aborted => self.participant_finish(txn, Decision::Abort, true, out),
            LogState::Committed => self.participant_finish(txn, Decision::Commit, true, out),
            LogState::VoteYes => self.participant_query(txn, out),
        }
    }

    fn on_storage(&mut self, req: ReqId, reply: StorageReply, out: &mut Vec<Effect>) {
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
            Purpose::VoteLog(txn) => self.participant_on_vote_logged(txn, out),
            Purpose::UnilateralAbort(txn) => {
                if self.participants.get(&txn).is_some_and(|s| s.phase == TwoPcParticipantPhase::AbortingUnilaterally) {
                    self.participant_finish(txn, Decision::Abort, true, out);
                }
            }
            Purpose::AsyncAbort(_) => {}
            Purpose::CommitRecord(txn) => {
                if let Some(s) = self.coordinators.get_mut(&txn) {
                    if s.phase == TwoPcCoordinatorPhase::LoggingDecision {
                        s.decision_logged = true;
                        self.coordinator_decide(txn, Decision::Commit, true, out);
                    }
                }
            }
            Purpose::DecisionLog(txn) => out.push(Effect::Release { txn }),
            Purpose::RecoverCoordinator(txn) => self.on_coordinator_recovered(txn, state_after, out),
            Purpose::RecoverParticipant(txn) => self.on_participant_recovered(txn, state_after, out),
            Purpose::AnswerQuery(txn, to) => self.answer_from_record(txn, to, state_after, out),
        }
    }

    fn on_timer(&mut self, key: TimerKey, out: &mut Vec<Effect>) {
        let txn = key.txn;
        let own_log = self.own_log();
        match key.kind {
            TimerKind::Votes => {
                if self.coordinators.get(&txn).is_some_and(|s| s.phase == TwoPcCoordinatorPhase::AwaitingVotes) {
                    self.coordinator_abort(txn, out);
                }
            }
            TimerKind::VoteReq => {
                let Some(state) = self.participants.get_mut(&txn) else {
                    return;
                };
                if state.phase == TwoPcParticipantPhase::AwaitingVoteReq {
                    state.phase = TwoPcParticipantPhase::AbortingUnilaterally;
                    self.requests.issue(StorageOp::log(own_log, txn, RecordType::Abort), Purpose::UnilateralAbort(txn), out);
                }
            }
            TimerKind::Decision => {
                if self.participants.get(&txn).is_some_and(|s| s.phase == TwoPcParticipantPhase::AwaitingDecision) {
                    self.participant_query(txn, out);
                }
            }
            TimerKind::Query => {
                let rounds = self.cfg.query_rounds;
                let Some(state) = self.participants.get_mut(&txn) else {
                    return;
                };
                if state.phase != TwoPcParticipantPhase::Querying {
                    return;
                }
                if state.query_round < rounds {
                    self.participant_query(txn, out);
                } else {
                    state.phase = TwoPcParticipantPhase::Blocked;
                }
            }
            TimerKind::Termination | TimerKind::CoordinatorTermination => {}
        }
    }
}

impl CommitProtocol for TwoPcNode {
    fn node(&self) -> NodeId {
        self.id
    }

    fn handle(&mut self, _now: VirtualTime, input: Input, out: &mut Vec<Effect>) {
        match input {
            Input::Begin(txn) => self.coordinator_start(txn, out),
            Input::Join { txn, vote_yes } => self.participant_join(txn, vote_yes, out),
            Input::Message { from, msg } => match msg {
                Message::VoteReq { txn, .. } => self.participant_on_vote_req(from, txn, out),
                Message::VoteResp { txn, vote } => self.coordinator_on_vote(from, txn, vote, out),
                Message::Decision { txn, decision } => self.participant_on_decision(txn, decision, out),
                Message::DecisionReq { txn } => {
                    // A query from a participant goes to whichever role this
                    // node plays; the coordinator role knows more.
                    if self.coordinators.contains_key(&txn) || txn.coordinator == self.id {
                        self.coordinator_on_query(from, txn, out);
                    } else {
                        self.participant_on_query(from, txn, out);
                    }
                }
                Message::DecisionResp { txn, outcome } => self.participant_on_answer(txn, outcome, out),
                Message::Release { txn } => self.participant_release(txn, out),
                Message::ExecReq { .. } | Message::ExecResp { .. } => {}
            },
            Input::Timer(key) => self.on_timer(key, out),
            Input::Storage { req, reply } => self.on_storage(req, reply, out),
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

    fn txn(parts: &[(NodeId, bool)]) -> Arc<Transaction> {
        let acc = parts.iter().map(|&(p, write)| (p, vec![if write { Access::write(1) } else { Access::read(1) }])).collect();
        Arc::new(Transaction::new(TxnId::new(COORD, 1), acc).unwrap())
    }

    fn node(id: NodeId, mode: TerminationMode) -> TwoPcNode {
        TwoPcNode::new(id, ProtocolConfig::new(Timeouts::derived(250, 1000)), mode)
    }

    fn run(n: &mut TwoPcNode, input: Input) -> Vec<Effect> {
        let mut out = Vec::new();
        n.handle(VirtualTime(0), input, &mut out);
        out
    }

    fn drain_storage(n: &mut TwoPcNode, store: &MemoryStore, mut effects: Vec<Effect>) -> Vec<Effect> {
        let mut rest = Vec::new();
        while let Some(e) = effects.pop() {
            if let Effect::Storage { req, op } = e {
                let reply = store.apply(&op, Origin::new(n.id, VirtualTime(0))).reply;
                effects.extend(run(n, Input::Storage { req, reply }));
            } else {
                rest.push(e);
            }
        }
        rest
    }

    fn vote(from: NodeId, t: TxnId, vote: Vote) -> Input {
        Input::Message { from, msg: Message::VoteResp { txn: t, vote } }
    }

    #[test]
    fn commit_waits_for_decision_record() {
        let t = txn(&[(P1, true), (P2, true)]);
        let store = MemoryStore::new();
        let mut c = node(COORD, TerminationMode::Cooperative);
        run(&mut c, Input::Begin(Arc::clone(&t)));
        run(&mut c, vote(P1, t.id, Vote::Yes));
        let out = run(&mut c, vote(P2, t.id, Vote::Yes));
        assert!(!out.iter().any(|e| matches!(e, Effect::Reply { .. })));
        assert_eq!(out.iter().filter(|e| matches!(e, Effect::Storage { .. })).count(), 1);
        let rest = drain_storage(&mut c, &store, out);
        assert!(rest.iter().any(|e| matches!(e, Effect::Reply { decision: Decision::Commit, .. })));
        assert!(c.coordinator_state(t.id).unwrap().decision_logged);
        assert_eq!(store.slot(LogId::coordinator(COORD), t.id).state(), LogState::Committed);
    }

    #[test]
    fn read_only_participant_leaves_and_skips_decision() {
        let t = txn(&[(P1, true), (P2, false)]);
        let mut p2 = node(P2, TerminationMode::Cooperative);
        run(&mut p2, Input::Join { txn: Arc::clone(&t), vote_yes: true });
        let out = run(&mut p2, Input::Message { from: COORD, msg: Message::VoteReq { txn: t.id, participants: vec![P1, P2] } });
        assert!(out.contains(&Effect::Leave { txn: t.id }));
        assert!(!out.iter().any(|e| matches!(e, Effect::Storage { .. })));

        let store = MemoryStore::new();
        let mut c = node(COORD, TerminationMode::Cooperative);
        run(&mut c, Input::Begin(Arc::clone(&t)));
        run(&mut c, vote(P2, t.id, Vote::ReadOnly));
        let out = run(&mut c, vote(P1, t.id, Vote::Yes));
        let out = drain_storage(&mut c, &store, out);
        let sends: Vec<_> = out
            .iter()
            .filter_map(|e| match e {
                Effect::Send { to, msg: Message::Decision { .. } } => Some(*to),
                _ => None,
            })
            .collect();
        assert_eq!(sends, vec![P1]);
    }

    #[test]
    fn vote_timeout_aborts_without_termination() {
        let t = txn(&[(P1, true), (P2, true)]);
        let mut c = node(COORD, TerminationMode::Cooperative);
        run(&mut c, Input::Begin(Arc::clone(&t)));
        run(&mut c, vote(P1, t.id, Vote::Yes));
        let out = run(&mut c, Input::Timer(TimerKey::new(t.id, TimerKind::Votes)));
        assert!(out.iter().any(|e| matches!(e, Effect::Reply { decision: Decision::Abort, .. })));
        // The only storage op is the lazy abort record in the coordinator's own log.
        let ops: Vec<_> = out
            .iter()
            .filter_map(|e| match e {
                Effect::Storage { op, .. } => Some(op.log),
                _ => None,
            })
            .collect();
        assert_eq!(ops, vec![LogId::coordinator(COORD)]);
    }

    fn uncertain_participant(mode: TerminationMode) -> (TwoPcNode, Arc<Transaction>) {
        let t = txn(&[(P1, true), (P2, true)]);
        let store = MemoryStore::new();
        let mut p = node(P1, mode);
        run(&mut p, Input::Join { txn: Arc::clone(&t), vote_yes: true });
        let out = run(&mut p, Input::Message { from: COORD, msg: Message::VoteReq { txn: t.id, participants: vec![P1, P2] } });
        drain_storage(&mut p, &store, out);
        (p, t)
    }

    fn query_targets(out: &[Effect]) -> Vec<NodeId> {
        out.iter()
            .filter_map(|e| match e {
                Effect::Send { to, msg: Message::DecisionReq { .. } } => Some(*to),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn naive_asks_coordinator_cooperative_asks_peers() {
        let (mut p, t) = uncertain_participant(TerminationMode::Naive);
        let out = run(&mut p, Input::Timer(TimerKey::new(t.id, TimerKind::Decision)));
        assert_eq!(query_targets(&out), vec![COORD]);

        let (mut p, t) = uncertain_participant(TerminationMode::Cooperative);
        let out = run(&mut p, Input::Timer(TimerKey::new(t.id, TimerKind::Decision)));
        assert_eq!(query_targets(&out), vec![COORD, P2]);
        let out = run(&mut p, Input::Message { from: P2, msg: Message::DecisionResp { txn: t.id, outcome: PeerOutcome::Commit } });
        assert!(out.contains(&Effect::Decide { txn: t.id, decision: Decision::Commit }));
    }

    #[test]
    fn uncertain_participant_blocks_after_query_rounds() {
        let (mut p, t) = uncertain_participant(TerminationMode::Cooperative);
        run(&mut p, Input::Timer(TimerKey::new(t.id, TimerKind::Decision)));
        for _ in 1..p.cfg.query_rounds {
            let out = run(&mut p, Input::Timer(TimerKey::new(t.id, TimerKind::Query)));
            assert!(!query_targets(&out).is_empty());
        }
        let out = run(&mut p, Input::Timer(TimerKey::new(t.id, TimerKind::Query)));
        assert!(out.is_empty());
        assert_eq!(p.participant_state(t.id).unwrap().phase, TwoPcParticipantPhase::Blocked);
        // The recovered coordinator's rebroadcast still unblocks it.
        let out = run(&mut p, Input::Message { from: COORD, msg: Message::Decision { txn: t.id, decision: Decision::Commit } });
        assert!(out.contains(&Effect::Decide { txn: t.id, decision: Decision::Commit }));
    }

    #[test]
    fn peer_that_never_voted_aborts_when_asked() {
        let t = txn(&[(P1, true), (P2, true)]);
        let mut p2 = node(P2, TerminationMode::Cooperative);
        run(&mut p2, Input::Join { txn: Arc::clone(&t), vote_yes: true });
        let out = run(&mut p2, Input::Message { from: P1, msg: Message::DecisionReq { txn: t.id } });
        assert!(out.contains(&Effect::Decide { txn: t.id, decision: Decision::Abort }));
        assert!(out.contains(&Effect::Send { to: P1, msg: Message::DecisionResp { txn: t.id, outcome: PeerOutcome::Abort } }));
    }

    #[test]
    fn coordinator_recovery_presumes_abort() {
        let t = txn(&[(P1, true), (P2, true)]);
        let store = MemoryStore::new();
        let mut c = node(COORD, TerminationMode::Naive);
        let out = run(&mut c, Input::Recover { txns: vec![Arc::clone(&t)] });
        let rest = drain_storage(&mut c, &store, out);
        assert!(rest.contains(&Effect::Decide { txn: t.id, decision: Decision::Abort }));
        assert!(!rest.iter().any(|e| matches!(e, Effect::Reply { .. })));
        assert_eq!(store.slot(LogId::coordinator(COORD), t.id).state(), LogState::Aborted);

        let store = MemoryStore::new();
        store.apply(&StorageOp::log(LogId::coordinator(COORD), t.id, RecordType::Commit), Origin::new(COORD, VirtualTime(0)));
        let mut c = node(COORD, TerminationMode::Naive);
        let out = run(&mut c, Input::Recover { txns: vec![Arc::clone(&t)] });
        let rest = drain_storage(&mut c, &store, out);
        let commits =
            rest.iter().filter(|e| matches!(e, Effect::Send { msg: Message::Decision { decision: Decision::Commit, .. }, .. })).count();
        assert_eq!(commits, 2);
    }
}
