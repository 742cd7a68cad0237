//! Leader-based total-order broadcast for one committee.
//!
//! Slots are decided one at a time. Each slot starts in view 0 and the leader
//! of `(slot, view)` is `(slot + view) mod n`. A slot is decided once a quorum
//! certificate for the last voting phase exists. A timed-out view moves to the
//! next leader; the new leader must re-propose the highest prepared payload it
//! learns from `2f + 1` view-change messages, which it forwards as
//! justification.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Debug;

use super::cost::CostModel;
use crate::crypto::{Canonical, CommitteeId, Digest, KeyPair, KeyRegistry, QuorumCertificate, Signature, SignerId};
use crate::simnet::{MemberBehavior, Time};

pub trait Payload: Clone + Debug + PartialEq {
    fn digest(&self) -> Digest;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OrderingConfig {
    pub committee: CommitteeId,
    pub n: usize,
    pub f: usize,
    pub model: CostModel,
    pub delta: Time,
}

impl OrderingConfig {
    pub fn leader(&self, slot: u64, view: u64) -> u32 {
        ((slot + view) % self.n as u64) as u32
    }

    pub fn quorum(&self) -> usize {
        2 * self.f + 1
    }

    fn signer(&self, i: u32) -> SignerId {
        SignerId::Member(self.committee, i)
    }

    pub fn vote_digest(&self, phase: u8, view: u64, slot: u64, payload: Digest) -> Digest {
        Canonical::new()
            .tag("order-vote")
            .u32(self.committee.0)
            .u8(phase)
            .u64(view)
            .u64(slot)
            .digest_field(&payload)
            .finish()
    }

    fn view_change_digest(&self, new_view: u64, slot: u64, prepared: Option<(u64, Digest)>) -> Digest {
        let mut c = Canonical::new();
        c.tag("order-view-change").u32(self.committee.0).u64(new_view).u64(slot);
        match prepared {
            Some((v, d)) => c.u8(1).u64(v).digest_field(&d),
            None => c.u8(0),
        };
        c.finish()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedCert<P> {
    pub view: u64,
    pub payload: P,
    pub qc: QuorumCertificate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewChange<P> {
    pub from: u32,
    pub new_view: u64,
    pub slot: u64,
    pub prepared: Option<PreparedCert<P>>,
    pub sig: Signature,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vote {
    pub from: u32,
    pub phase: u8,
    pub view: u64,
    pub slot: u64,
    pub payload: Digest,
    pub sig: Signature,
}

#[derive(Clone, Debug, PartialEq)]
pub enum OrderMsg<P> {
    /// Star pattern: a member is ready for `slot` and reports to the leader.
    NewView {
        from: u32,
        slot: u64,
        view: u64,
    },
    Propose {
        view: u64,
        slot: u64,
        payload: P,
        justification: Vec<ViewChange<P>>,
    },
    Vote(Vote),
    /// Star pattern: the leader's aggregated phase certificate.
    Certificate {
        phase: u8,
        view: u64,
        slot: u64,
        payload: P,
        qc: QuorumCertificate,
    },
    ViewChange(ViewChange<P>),
    /// Catch-up for a member still working on an already decided slot.
    Decided {
        view: u64,
        slot: u64,
        payload: P,
        qc: QuorumCertificate,
    },
}

impl<P> OrderMsg<P> {
    pub fn slot(&self) -> u64 {
        match self {
            OrderMsg::NewView { slot, .. }
            | OrderMsg::Propose { slot, .. }
            | OrderMsg::Certificate { slot, .. }
            | OrderMsg::Decided { slot, .. } => *slot,
            OrderMsg::Vote(v) => v.slot,
            OrderMsg::ViewChange(vc) => vc.slot,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            OrderMsg::NewView { .. } => "order-new-view",
            OrderMsg::Propose { .. } => "order-propose",
            OrderMsg::Vote(_) => "order-vote",
            OrderMsg::Certificate { .. } => "order-certificate",
            OrderMsg::ViewChange(_) => "order-view-change",
            OrderMsg::Decided { .. } => "order-decided",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum OrderAction<P> {
    Send { to: u32, msg: OrderMsg<P> },
    SetTimer { at: Time, tag: u64 },
    Decide { slot: u64, payload: P },
}

/// One decided log entry.
#[derive(Clone, Debug, PartialEq)]
pub struct LogEntry<P> {
    pub slot: u64,
    pub view: u64,
    pub payload: P,
    pub qc: QuorumCertificate,
}

/// Per-slot working state, dropped once the slot is decided.
#[derive(Debug)]
struct SlotState<P> {
    view: u64,
    accepted: BTreeMap<u64, P>,
    votes: BTreeMap<(u64, u8), BTreeMap<Digest, BTreeMap<u32, Signature>>>,
    voted: BTreeSet<(u64, u8)>,
    certified: BTreeSet<(u64, u8)>,
    prepared: Option<PreparedCert<P>>,
    new_views: BTreeMap<u64, BTreeSet<u32>>,
    view_changes: BTreeMap<u64, BTreeMap<u32, ViewChange<P>>>,
    proposed: BTreeSet<u64>,
    new_view_sent: BTreeSet<u64>,
    armed: BTreeSet<u64>,
    view_changes_in_row: u32,
}

impl<P> Default for SlotState<P> {
    fn default() -> Self {
        Self {
            view: 0,
            accepted: BTreeMap::new(),
            votes: BTreeMap::new(),
            voted: BTreeSet::new(),
            certified: BTreeSet::new(),
            prepared: None,
            new_views: BTreeMap::new(),
            view_changes: BTreeMap::new(),
            proposed: BTreeSet::new(),
            new_view_sent: BTreeSet::new(),
            armed: BTreeSet::new(),
            view_changes_in_row: 0,
        }
    }
}

pub struct OrderingReplica<P> {
    cfg: OrderingConfig,
    index: u32,
    key: KeyPair,
    registry: KeyRegistry,
    behavior: Option<MemberBehavior>,
    log: Vec<LogEntry<P>>,
    pool: Vec<P>,
    slot: SlotState<P>,
    future: Vec<OrderMsg<P>>,
    caught_up: BTreeSet<(u64, u32)>,
}

pub fn timer_tag(slot: u64, view: u64) -> u64 {
    slot << 24 | (view & 0xff_ffff)
}

impl<P: Payload> OrderingReplica<P> {
    pub fn new(cfg: OrderingConfig, index: u32, registry: &KeyRegistry, behavior: Option<MemberBehavior>) -> Self {
        Self {
            cfg,
            index,
            key: registry.keypair(SignerId::Member(cfg.committee, index)),
            registry: registry.clone(),
            behavior,
            log: Vec::new(),
            pool: Vec::new(),
            slot: SlotState::default(),
            future: Vec::new(),
            caught_up: BTreeSet::new(),
        }
    }

    pub fn index(&self) -> u32 {
        self.index
    }

    pub fn log(&self) -> &[LogEntry<P>] {
        &self.log
    }

    pub fn current_slot(&self) -> u64 {
        self.log.len() as u64
    }

    pub fn current_view(&self) -> u64 {
        self.slot.view
    }

    pub fn pool_len(&self) -> usize {
        self.pool.len()
    }

    fn silent(&self) -> bool {
        self.behavior == Some(MemberBehavior::Silent)
    }

    fn withholds_votes(&self) -> bool {
        self.behavior == Some(MemberBehavior::WithholdAcks)
    }

    fn is_decided(&self, d: Digest) -> bool {
        self.log.iter().any(|e| e.payload.digest() == d)
    }

    fn timeout(&self) -> Time {
        self.cfg.model.base_timeout(self.cfg.delta) << self.slot.view_changes_in_row.min(16)
    }

    /// Adds `payload` to the pool of requests awaiting a slot.
    pub fn submit(&mut self, payload: P, now: Time) -> Vec<OrderAction<P>> {
        let d = payload.digest();
        if !self.silent() && !self.is_decided(d) && !self.pool.iter().any(|p| p.digest() == d) {
            self.pool.push(payload);
        }
        let mut out = Vec::new();
        self.progress(now, &mut out);
        out
    }

    pub fn on_timer(&mut self, tag: u64, now: Time) -> Vec<OrderAction<P>> {
        let mut out = Vec::new();
        if self.silent() {
            return out;
        }
        let slot = self.current_slot();
        if tag != timer_tag(slot, self.slot.view) {
            return out;
        }
        let new_view = self.slot.view + 1;
        self.slot.view = new_view;
        self.slot.view_changes_in_row += 1;
        let prepared = self.slot.prepared.clone();
        let pv = prepared.as_ref().map(|p| (p.view, p.payload.digest()));
        let sig = self.key.sign(self.cfg.view_change_digest(new_view, slot, pv));
        if !self.withholds_votes() {
            out.push(OrderAction::Send {
                to: self.cfg.leader(slot, new_view),
                msg: OrderMsg::ViewChange(ViewChange {
                    from: self.index,
                    new_view,
                    slot,
                    prepared,
                    sig,
                }),
            });
        }
        self.progress(now, &mut out);
        out
    }

    pub fn on_message(&mut self, msg: OrderMsg<P>, now: Time) -> Vec<OrderAction<P>> {
        let mut out = Vec::new();
        if self.silent() {
            return out;
        }
        self.handle(msg, now, &mut out);
        self.progress(now, &mut out);
        out
    }

    fn handle(&mut self, msg: OrderMsg<P>, now: Time, out: &mut Vec<OrderAction<P>>) {
        let slot = self.current_slot();
        let msg_slot = msg.slot();
        if msg_slot > slot {
            self.future.push(msg);
            return;
        }
        if msg_slot < slot {
            self.help_lagging(&msg, out);
            return;
        }
        match msg {
            OrderMsg::NewView { from, view, .. } => {
                self.slot.new_views.entry(view).or_default().insert(from);
            }
            OrderMsg::Propose {
                view,
                payload,
                justification,
                ..
            } => self.on_propose(view, payload, justification, out),
            OrderMsg::Vote(v) => self.on_vote(v),
            OrderMsg::Certificate {
                phase,
                view,
                payload,
                qc,
                ..
            } => self.on_certificate(phase, view, payload, qc, now, out),
            OrderMsg::ViewChange(vc) => {
                if self.valid_view_change(&vc) {
                    self.slot
                        .view_changes
                        .entry(vc.new_view)
                        .or_default()
                        .insert(vc.from, vc);
                }
            }
            OrderMsg::Decided { view, payload, qc, .. } => {
                if self.valid_qc(&qc, self.cfg.model.phases(), view, slot, payload.digest()) {
                    self.decide(view, payload, qc, now, out);
                }
            }
        }
    }

    fn help_lagging(&mut self, msg: &OrderMsg<P>, out: &mut Vec<OrderAction<P>>) {
        // Only a view change signals that the sender is stuck; late votes are
        // normal after a quorum was reached.
        let OrderMsg::ViewChange(vc) = msg else { return };
        let from = vc.from;
        let slot = msg.slot();
        if self.caught_up.insert((slot, from)) {
            let e = &self.log[slot as usize];
            out.push(OrderAction::Send {
                to: from,
                msg: OrderMsg::Decided {
                    view: e.view,
                    slot,
                    payload: e.payload.clone(),
                    qc: e.qc.clone(),
                },
            });
        }
    }

    fn valid_qc(&self, qc: &QuorumCertificate, phase: u8, view: u64, slot: u64, payload: Digest) -> bool {
        qc.committee == self.cfg.committee
            && qc.digest == self.cfg.vote_digest(phase, view, slot, payload)
            && qc.verify(self.cfg.n, self.cfg.f, &self.registry)
    }

    fn valid_view_change(&self, vc: &ViewChange<P>) -> bool {
        let pv = vc.prepared.as_ref().map(|p| (p.view, p.payload.digest()));
        let d = self.cfg.view_change_digest(vc.new_view, vc.slot, pv);
        if !self.registry.verify_for(&vc.sig, self.cfg.signer(vc.from), d) {
            return false;
        }
        match &vc.prepared {
            Some(p) => p.view < vc.new_view && self.valid_qc(&p.qc, 1, p.view, vc.slot, p.payload.digest()),
            None => true,
        }
    }

    /// The payload a leader of `view > 0` is bound to, or `Err` when the
    /// justification is not a valid quorum of view changes.
    fn required_payload(&self, view: u64, justification: &[ViewChange<P>]) -> Result<Option<P>, ()> {
        let slot = self.current_slot();
        let mut from = BTreeSet::new();
        let mut best: Option<&PreparedCert<P>> = None;
        for vc in justification {
            if vc.new_view != view || vc.slot != slot || !self.valid_view_change(vc) {
                return Err(());
            }
            from.insert(vc.from);
            if let Some(p) = &vc.prepared {
                if best.is_none_or(|b| p.view > b.view) {
                    best = Some(p);
                }
            }
        }
        if from.len() < self.cfg.quorum() {
            return Err(());
        }
        Ok(best.map(|b| b.payload.clone()))
    }

    fn on_propose(&mut self, view: u64, payload: P, justification: Vec<ViewChange<P>>, out: &mut Vec<OrderAction<P>>) {
        if self.behavior == Some(MemberBehavior::SignAnything) {
            self.slot.accepted.entry(view).or_insert_with(|| payload.clone());
            for phase in 1..=self.cfg.model.phases() {
                self.send_vote(phase, view, payload.digest(), out);
            }
            return;
        }
        if view < self.slot.view || self.slot.accepted.contains_key(&view) {
            return;
        }
        if view > 0 {
            match self.required_payload(view, &justification) {
                Err(()) => return,
                Ok(Some(req)) if req != payload => return,
                Ok(_) => {}
            }
        }
        if view > self.slot.view {
            self.slot.view = view;
        }
        self.slot.accepted.insert(view, payload.clone());
        self.cast_vote(1, view, payload.digest(), out);
    }

    fn cast_vote(&mut self, phase: u8, view: u64, payload: Digest, out: &mut Vec<OrderAction<P>>) {
        if self.withholds_votes() || !self.slot.voted.insert((view, phase)) {
            return;
        }
        self.send_vote(phase, view, payload, out);
    }

    fn send_vote(&mut self, phase: u8, view: u64, payload: Digest, out: &mut Vec<OrderAction<P>>) {
        let slot = self.current_slot();
        let vote = Vote {
            from: self.index,
            phase,
            view,
            slot,
            payload,
            sig: self.key.sign(self.cfg.vote_digest(phase, view, slot, payload)),
        };
        match self.cfg.model {
            CostModel::PbftLike => {
                for to in 0..self.cfg.n as u32 {
                    out.push(OrderAction::Send {
                        to,
                        msg: OrderMsg::Vote(vote.clone()),
                    });
                }
            }
            CostModel::HotstuffLike => out.push(OrderAction::Send {
                to: self.cfg.leader(slot, view),
                msg: OrderMsg::Vote(vote),
            }),
        }
    }

    fn on_vote(&mut self, v: Vote) {
        if v.phase == 0 || v.phase > self.cfg.model.phases() || v.from as usize >= self.cfg.n {
            return;
        }
        let d = self.cfg.vote_digest(v.phase, v.view, v.slot, v.payload);
        if !self.registry.verify_for(&v.sig, self.cfg.signer(v.from), d) {
            return;
        }
        self.slot
            .votes
            .entry((v.view, v.phase))
            .or_default()
            .entry(v.payload)
            .or_default()
            .insert(v.from, v.sig);
    }

    fn quorum_for(&self, view: u64, phase: u8) -> Option<(Digest, QuorumCertificate)> {
        let by_digest = self.slot.votes.get(&(view, phase))?;
        for (d, sigs) in by_digest {
            if sigs.len() >= self.cfg.quorum() {
                let qc = QuorumCertificate::assemble(
                    self.cfg.committee,
                    self.cfg.n,
                    self.cfg.f,
                    sigs.values().copied(),
                    &self.registry,
                )
                .ok()?;
                return Some((*d, qc));
            }
        }
        None
    }

    fn on_certificate(
        &mut self,
        phase: u8,
        view: u64,
        payload: P,
        qc: QuorumCertificate,
        now: Time,
        out: &mut Vec<OrderAction<P>>,
    ) {
        let slot = self.current_slot();
        let d = payload.digest();
        if self.cfg.model != CostModel::HotstuffLike || !self.valid_qc(&qc, phase, view, slot, d) {
            return;
        }
        if phase == self.cfg.model.phases() {
            self.decide(view, payload, qc, now, out);
            return;
        }
        if view < self.slot.view {
            return;
        }
        if phase == 1 {
            self.note_prepared(view, payload, qc);
        }
        self.cast_vote(phase + 1, view, d, out);
    }

    fn note_prepared(&mut self, view: u64, payload: P, qc: QuorumCertificate) {
        if self.slot.prepared.as_ref().is_none_or(|p| p.view < view) {
            self.slot.prepared = Some(PreparedCert { view, payload, qc });
        }
    }

    fn decide(&mut self, view: u64, payload: P, qc: QuorumCertificate, now: Time, out: &mut Vec<OrderAction<P>>) {
        let slot = self.current_slot();
        let d = payload.digest();
        self.pool.retain(|p| p.digest() != d);
        self.log.push(LogEntry {
            slot,
            view,
            payload: payload.clone(),
            qc,
        });
        self.slot = SlotState::default();
        out.push(OrderAction::Decide { slot, payload });
        let next = slot + 1;
        let (now_msgs, later): (Vec<_>, Vec<_>) = std::mem::take(&mut self.future)
            .into_iter()
            .partition(|m| m.slot() == next);
        self.future = later;
        for m in now_msgs {
            self.handle(m, now, out);
        }
    }

    /// Drives the current slot forward after any state change.
    fn progress(&mut self, now: Time, out: &mut Vec<OrderAction<P>>) {
        loop {
            let before = (self.current_slot(), out.len());
            self.step(now, out);
            if (self.current_slot(), out.len()) == before {
                break;
            }
        }
    }

    fn step(&mut self, now: Time, out: &mut Vec<OrderAction<P>>) {
        let slot = self.current_slot();
        let view = self.slot.view;
        let active = !self.pool.is_empty() || !self.slot.accepted.is_empty();
        if active && self.slot.armed.insert(view) {
            out.push(OrderAction::SetTimer {
                at: now + self.timeout(),
                tag: timer_tag(slot, view),
            });
        }
        let star = self.cfg.model == CostModel::HotstuffLike;
        if star && view == 0 && !self.pool.is_empty() && self.slot.new_view_sent.insert(0) {
            out.push(OrderAction::Send {
                to: self.cfg.leader(slot, 0),
                msg: OrderMsg::NewView {
                    from: self.index,
                    slot,
                    view: 0,
                },
            });
        }
        if self.cfg.leader(slot, view) == self.index {
            self.maybe_propose(slot, view, out);
        }
        if star {
            if self.cfg.leader(slot, view) == self.index {
                self.aggregate(view, out);
            }
        } else {
            let last = self.cfg.model.phases();
            let decided = self.slot.accepted.iter().find_map(|(&v, p)| {
                let (d, qc) = self.quorum_for(v, last)?;
                (d == p.digest()).then(|| (v, p.clone(), qc))
            });
            if let Some((v, payload, qc)) = decided {
                self.decide(v, payload, qc, now, out);
                return;
            }
            for phase in 1..=self.cfg.model.phases() {
                let Some((d, qc)) = self.quorum_for(view, phase) else {
                    continue;
                };
                let Some(payload) = self.slot.accepted.get(&view).cloned() else {
                    break;
                };
                if payload.digest() != d {
                    break;
                }
                if phase == self.cfg.model.phases() {
                    self.decide(view, payload, qc, now, out);
                    return;
                }
                if phase == 1 {
                    self.note_prepared(view, payload, qc);
                }
                self.cast_vote(phase + 1, view, d, out);
            }
        }
    }

    /// Star pattern: the leader turns vote quorums into certificates.
    fn aggregate(&mut self, view: u64, out: &mut Vec<OrderAction<P>>) {
        let slot = self.current_slot();
        for phase in 1..=self.cfg.model.phases() {
            if self.slot.certified.contains(&(view, phase)) {
                continue;
            }
            let Some((d, qc)) = self.quorum_for(view, phase) else {
                continue;
            };
            let Some(payload) = self.slot.accepted.get(&view).cloned() else {
                continue;
            };
            if payload.digest() != d {
                continue;
            }
            self.slot.certified.insert((view, phase));
            for to in 0..self.cfg.n as u32 {
                out.push(OrderAction::Send {
                    to,
                    msg: OrderMsg::Certificate {
                        phase,
                        view,
                        slot,
                        payload: payload.clone(),
                        qc: qc.clone(),
                    },
                });
            }
        }
    }

    fn maybe_propose(&mut self, slot: u64, view: u64, out: &mut Vec<OrderAction<P>>) {
        if self.slot.proposed.contains(&view) || self.behavior == Some(MemberBehavior::StallLeader) {
            return;
        }
        let (payload, justification) = if view == 0 {
            if self.cfg.model == CostModel::HotstuffLike
                && self.slot.new_views.get(&0).map_or(0, BTreeSet::len) < self.cfg.quorum()
            {
                return;
            }
            match self.pool.first() {
                Some(p) => (p.clone(), Vec::new()),
                None => return,
            }
        } else {
            let Some(vcs) = self.slot.view_changes.get(&view) else {
                return;
            };
            if vcs.len() < self.cfg.quorum() {
                return;
            }
            let justification: Vec<ViewChange<P>> = vcs.values().cloned().collect();
            let bound = match self.required_payload(view, &justification) {
                Ok(b) => b,
                Err(()) => return,
            };
            match bound.or_else(|| self.pool.first().cloned()) {
                Some(p) => (p, justification),
                None => return,
            }
        };
        self.slot.proposed.insert(view);
        if self.behavior == Some(MemberBehavior::SignAnything) && view == 0 && self.pool.len() >= 2 {
            // Equivocating leader: different payloads to the two halves.
            let other = self.pool[1].clone();
            for to in 0..self.cfg.n as u32 {
                let p = if (to as usize) < self.cfg.n / 2 {
                    payload.clone()
                } else {
                    other.clone()
                };
                out.push(OrderAction::Send {
                    to,
                    msg: OrderMsg::Propose {
                        view,
                        slot,
                        payload: p,
                        justification: Vec::new(),
                    },
                });
            }
            return;
        }
        for to in 0..self.cfg.n as u32 {
            out.push(OrderAction::Send {
                to,
                msg: OrderMsg::Propose {
                    view,
                    slot,
                    payload: payload.clone(),
                    justification: justification.clone(),
                },
            });
        }
    }
}
