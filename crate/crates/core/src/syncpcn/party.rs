//! Channel party: runs the update protocol, forwards locks and claims, and
//! falls back to committee disputes.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::channel::{registration_digest, ChannelSnapshot, ConditionalPayment, CpState, Side};
use crate::crypto::{Digest, KeyPair, OnionKey, OnionPacket, Signature, SignerId, Witness};
use crate::ledger::{ChannelId, FinalState};
use crate::simnet::{NodeId, PartyBehavior, Time};

use super::env::{ChannelInfo, Env};
use super::msg::{DisputeKind, Msg, UpdateKind};
use super::plan::{PaymentPlan, RejectReason};

#[derive(Clone, Debug)]
pub(super) enum Action {
    Lock {
        payment_id: u64,
        cp: ConditionalPayment,
        onion: Option<Box<OnionPacket>>,
    },
    Pay {
        payment_id: u64,
        witness: Witness,
    },
    Revoke {
        payment_id: u64,
    },
}

impl Action {
    fn payment_id(&self) -> u64 {
        match self {
            Action::Lock { payment_id, .. } | Action::Pay { payment_id, .. } | Action::Revoke { payment_id } => {
                *payment_id
            }
        }
    }

    fn kind(&self) -> UpdateKind {
        match self {
            Action::Lock { .. } => UpdateKind::Lock,
            Action::Pay { .. } => UpdateKind::Pay,
            Action::Revoke { .. } => UpdateKind::Revoke,
        }
    }
}

#[derive(Clone, Debug)]
pub(super) struct Update {
    pub kind: UpdateKind,
    pub payment_id: u64,
    pub snapshot: ChannelSnapshot,
    pub my_sig: Signature,
    pub peer_sig: Option<Signature>,
    pub action: Option<Action>,
}

#[derive(Clone, Debug, Default)]
pub(super) enum Flight {
    #[default]
    Idle,
    Proposed(Update),
    Accepted(Update),
    Registered(Update),
}

pub(super) struct ChannelView {
    pub info: ChannelInfo,
    pub side: Side,
    pub peer: u32,
    pub confirmed: ChannelSnapshot,
    pub flight: Flight,
    pub queue: VecDeque<Action>,
    pub book: BTreeMap<Digest, ChannelSnapshot>,
    pub orphans: BTreeMap<Digest, Update>,
    pub acks: BTreeMap<Digest, BTreeSet<u32>>,
    pub closing: bool,
    pub closed: bool,
    pub disputed: BTreeSet<Digest>,
    pub witness_sent: BTreeSet<u64>,
    pub closure_sigs: BTreeMap<Digest, (FinalState, BTreeMap<SignerId, Signature>)>,
    pub submitted: bool,
    pub stale_tried: bool,
    pub dispute_kind: Option<DisputeKind>,
}

impl ChannelView {
    /// Pending CP on the latest confirmed state.
    pub fn pending(&self, payment_id: u64) -> Option<ConditionalPayment> {
        if self.closed {
            return None;
        }
        self.confirmed.find(payment_id).copied()
    }
}

/// What the receiver expects for a payment it issued an invoice for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Invoice {
    pub sender: u32,
    pub value: u64,
    pub final_timelock: Time,
}

#[derive(Clone, Debug, Default)]
pub(super) struct PaymentState {
    pub incoming: Option<(ChannelId, ConditionalPayment)>,
    pub outgoing: Option<(ChannelId, ConditionalPayment)>,
    pub next_onion: Option<Box<OnionPacket>>,
    pub share: Option<crate::crypto::Witness>,
    /// Witness opening the incoming CP.
    pub in_witness: Option<Witness>,
    /// Witness opening the outgoing CP.
    pub out_witness: Option<Witness>,
    pub plan: Option<PaymentPlan>,
    pub claimed_upstream: bool,
    pub revealed: bool,
    pub revoking_upstream: bool,
    pub lock_failed: bool,
    pub completed_at: Option<Time>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(super) enum PartyTimer {
    Abort { channel: ChannelId, version: u64 },
    Register { channel: ChannelId, digest: Digest },
    Retry { channel: ChannelId },
    PayeeDeadline { channel: ChannelId, payment_id: u64 },
    PayerDeadline { channel: ChannelId, payment_id: u64 },
    PayeeClose { channel: ChannelId, payment_id: u64 },
    UpstreamRevoke { payment_id: u64 },
}

pub struct Party {
    pub id: u32,
    pub(super) key: KeyPair,
    pub(super) onion_key: OnionKey,
    pub(super) behavior: Option<PartyBehavior>,
    pub(super) views: BTreeMap<ChannelId, ChannelView>,
    pub(super) payments: BTreeMap<u64, PaymentState>,
    pub(super) invoices: BTreeMap<u64, Invoice>,
    timers: BTreeMap<u64, PartyTimer>,
    next_tag: u64,
}

impl Party {
    pub fn new(env: &Env, id: u32, behavior: Option<PartyBehavior>) -> Self {
        let views = env
            .channels
            .values()
            .filter(|c| c.parties.0 == id || c.parties.1 == id)
            .map(|c| {
                let side = if c.parties.0 == id { Side::A } else { Side::B };
                let confirmed = ChannelSnapshot::initial(c.id, c.deposits);
                let mut book = BTreeMap::new();
                book.insert(confirmed.digest(), confirmed.clone());
                let view = ChannelView {
                    info: c.clone(),
                    side,
                    peer: c.peer_of(id),
                    confirmed,
                    flight: Flight::Idle,
                    queue: VecDeque::new(),
                    book,
                    orphans: BTreeMap::new(),
                    acks: BTreeMap::new(),
                    closing: false,
                    closed: false,
                    disputed: BTreeSet::new(),
                    witness_sent: BTreeSet::new(),
                    closure_sigs: BTreeMap::new(),
                    submitted: false,
                    stale_tried: false,
                    dispute_kind: None,
                };
                (c.id, view)
            })
            .collect();
        Self {
            id,
            key: env.registry.keypair(SignerId::Party(id)),
            onion_key: env.registry.onion_key(id),
            behavior,
            views,
            payments: BTreeMap::new(),
            invoices: BTreeMap::new(),
            timers: BTreeMap::new(),
            next_tag: 0,
        }
    }

    pub fn node(&self) -> NodeId {
        NodeId::Party(self.id)
    }

    pub fn is_honest(&self) -> bool {
        self.behavior.is_none()
    }

    pub fn add_invoice(&mut self, payment_id: u64, invoice: Invoice) {
        self.invoices.insert(payment_id, invoice);
    }

    /// Latest confirmed state of one of this party's channels.
    pub fn confirmed(&self, channel: ChannelId) -> Option<&ChannelSnapshot> {
        self.views.get(&channel).map(|v| &v.confirmed)
    }

    /// When this party, as sender, learned the payment went through.
    pub fn completed_at(&self, payment_id: u64) -> Option<Time> {
        self.payments.get(&payment_id).and_then(|p| p.completed_at)
    }

    /// Every snapshot this party signed or countersigned.
    pub fn book(&self) -> impl Iterator<Item = (&Digest, &ChannelSnapshot)> {
        self.views.values().flat_map(|v| v.book.iter())
    }

    pub(super) fn timer(&mut self, env: &mut Env, at: Time, t: PartyTimer) {
        let tag = self.next_tag;
        self.next_tag += 1;
        self.timers.insert(tag, t);
        env.sched.set_timer(NodeId::Party(self.id), at, tag);
    }

    pub(super) fn wormhole(&self) -> Option<(u32, crate::simnet::WormholeVariant)> {
        match self.behavior {
            Some(PartyBehavior::Wormhole { partner, variant }) => Some((partner, variant)),
            _ => None,
        }
    }

    pub(super) fn sign_state(&self, snapshot: &ChannelSnapshot) -> Signature {
        self.key.sign(registration_digest(
            snapshot.channel,
            snapshot.version,
            snapshot.digest(),
        ))
    }

    /// Starts a payment this party sends.
    pub fn start_payment(&mut self, env: &mut Env, plan: PaymentPlan, onion: OnionPacket) {
        let pid = plan.payment_id;
        let Some(info) = env.channel_between(plan.path[0], plan.path[1]).cloned() else {
            return;
        };
        let side = self.views[&info.id].side;
        let cp = ConditionalPayment {
            payment_id: pid,
            payer: side,
            amount: plan.amounts[0],
            timelock: plan.absolute_timelock(0),
            condition: plan.conditions[0],
            state: CpState::Unlocked,
        };
        env.sched
            .note(NodeId::Party(self.id), format!("#{pid} setup: {} hops", plan.hops()));
        self.payments.insert(
            pid,
            PaymentState {
                plan: Some(plan),
                ..Default::default()
            },
        );
        self.enqueue(
            env,
            info.id,
            Action::Lock {
                payment_id: pid,
                cp,
                onion: Some(Box::new(onion)),
            },
        );
    }

    pub(super) fn enqueue(&mut self, env: &mut Env, channel: ChannelId, action: Action) {
        let view = self.views.get_mut(&channel).expect("own channel");
        let dup = view
            .queue
            .iter()
            .any(|a| a.kind() == action.kind() && a.payment_id() == action.payment_id());
        if !dup {
            view.queue.push_back(action);
        }
        self.pump(env, channel);
    }

    pub fn on_message(&mut self, env: &mut Env, from: NodeId, msg: Msg) {
        if self.behavior == Some(PartyBehavior::Silent) {
            return;
        }
        match (from, msg) {
            (
                NodeId::Party(p),
                Msg::Propose {
                    channel,
                    payment_id,
                    kind,
                    snapshot,
                    sig,
                    onion,
                    witness,
                },
            ) => self.on_propose(env, p, channel, payment_id, kind, snapshot, sig, onion, witness),
            (
                NodeId::Party(p),
                Msg::Accept {
                    channel,
                    version,
                    digest,
                    sig,
                    ..
                },
            ) => self.on_accept(env, p, channel, version, digest, sig),
            (
                NodeId::Party(p),
                Msg::Reject {
                    channel,
                    version,
                    reason,
                    ..
                },
            ) => self.on_reject(env, p, channel, version, reason),
            (NodeId::Party(p), Msg::Locked { payment_id }) => self.on_locked(env, p, payment_id),
            (NodeId::Party(p), Msg::Reveal { payment_id, witness }) => self.on_reveal(env, p, payment_id, witness),
            (NodeId::Party(_), Msg::WormholeLeak { payment_id, witness }) => self.on_leak(env, payment_id, witness),
            (
                NodeId::Member(c, j),
                Msg::Ack {
                    channel,
                    version,
                    digest,
                    sig,
                },
            ) if c.0 == channel.0 => self.on_ack(env, j, channel, version, digest, sig),
            (
                NodeId::Member(c, _),
                Msg::DisputeRefused {
                    channel,
                    version,
                    digest,
                },
            ) if c.0 == channel.0 => self.on_refused(env, channel, version, digest),
            (NodeId::Member(c, _), Msg::ClosureNotice { channel }) if c.0 == channel.0 => {
                self.on_closure_notice(env, channel)
            }
            (
                NodeId::Member(c, _),
                Msg::WitnessRelay {
                    channel,
                    payment_id,
                    witness,
                },
            ) if c.0 == channel.0 => self.on_relay(env, channel, payment_id, witness),
            (NodeId::Member(c, j), Msg::ClosureSig { state, sig }) if c.0 == state.channel.0 => {
                self.on_closure_sig(env, j, state, sig)
            }
            _ => {}
        }
    }

    pub fn on_timer(&mut self, env: &mut Env, tag: u64) {
        if self.behavior == Some(PartyBehavior::Silent) {
            return;
        }
        let Some(t) = self.timers.remove(&tag) else { return };
        match t {
            PartyTimer::Abort { channel, version } => {
                let view = self.views.get_mut(&channel).expect("own channel");
                if let Flight::Proposed(u) = &view.flight {
                    if u.snapshot.version == version {
                        let u = u.clone();
                        view.flight = Flight::Idle;
                        env.sched
                            .note(NodeId::Party(self.id), format!("{channel} v{version} aborted"));
                        self.orphan(channel, u.clone());
                        self.action_failed(env, channel, u, false);
                        self.pump(env, channel);
                    }
                }
            }
            PartyTimer::Register { channel, digest } => {
                let view = self.views.get_mut(&channel).expect("own channel");
                if let Flight::Accepted(u) = &view.flight {
                    if u.snapshot.digest() == digest {
                        let u = u.clone();
                        view.flight = Flight::Registered(u.clone());
                        self.broadcast_register(env, channel, &u);
                    }
                }
            }
            PartyTimer::Retry { channel } => self.pump(env, channel),
            PartyTimer::PayeeDeadline { channel, payment_id } => self.payee_deadline(env, channel, payment_id),
            PartyTimer::PayerDeadline { channel, payment_id } => self.payer_deadline(env, channel, payment_id),
            PartyTimer::PayeeClose { channel, payment_id } => self.payee_close(env, channel, payment_id),
            PartyTimer::UpstreamRevoke { payment_id } => self.revoke_upstream(env, payment_id),
        }
    }

    pub(super) fn orphan(&mut self, channel: ChannelId, u: Update) {
        let view = self.views.get_mut(&channel).expect("own channel");
        view.orphans.insert(u.snapshot.digest(), u);
    }

    /// Starts the next queued update if the channel is idle.
    pub(super) fn pump(&mut self, env: &mut Env, channel: ChannelId) {
        loop {
            let now = env.now();
            let delta = env.delta;
            let view = self.views.get_mut(&channel).expect("own channel");
            if !matches!(view.flight, Flight::Idle) || view.closing || view.closed {
                if view.closing || view.closed {
                    let failed: Vec<Action> = view.queue.drain(..).collect();
                    for a in failed {
                        self.queued_failed(env, channel, a);
                    }
                }
                return;
            }
            let Some(at) = Self::next_action(view, now, delta) else {
                return;
            };
            let action = view.queue.remove(at).expect("index from queue");
            let salt = rand::Rng::gen::<u64>(env.sched.rng());
            let next = match &action {
                Action::Lock { cp, .. } => view.confirmed.with_locked(*cp, 4 * delta, salt),
                Action::Pay { payment_id, .. } => view.confirmed.with_resolved(*payment_id, CpState::Paid, salt),
                Action::Revoke { payment_id } => view.confirmed.with_resolved(*payment_id, CpState::Revoked, salt),
            };
            let Ok(snapshot) = next else {
                self.queued_failed(env, channel, action);
                continue;
            };
            let view = &self.views[&channel];
            let mut deadlines: Vec<Time> = view.confirmed.pending.iter().map(|c| c.timelock).collect();
            if let Action::Lock { cp, .. } = &action {
                deadlines.push(cp.timelock);
            }
            if deadlines.iter().any(|&t| now + 5 * delta > t) {
                env.sched
                    .note(NodeId::Party(self.id), format!("{channel} too close to a timelock"));
                self.queued_failed(env, channel, action);
                continue;
            }
            let sig = self.sign_state(&snapshot);
            let pid = action.payment_id();
            let kind = action.kind();
            let (onion, witness) = match &action {
                Action::Lock { onion, .. } => (onion.clone(), None),
                Action::Pay { witness, .. } => (None, Some(*witness)),
                Action::Revoke { .. } => (None, None),
            };
            let view = self.views.get_mut(&channel).expect("own channel");
            view.book.insert(snapshot.digest(), snapshot.clone());
            let peer = view.peer;
            let version = snapshot.version;
            let u = Update {
                kind,
                payment_id: pid,
                snapshot: snapshot.clone(),
                my_sig: sig,
                peer_sig: None,
                action: Some(action),
            };
            view.flight = Flight::Proposed(u);
            let ann = self.step_annotation(env, pid, kind, channel);
            let m = Msg::Propose {
                channel,
                payment_id: pid,
                kind,
                snapshot,
                sig,
                onion,
                witness,
            };
            env.send(NodeId::Party(self.id), NodeId::Party(peer), m, ann);
            self.timer(env, now + 2 * delta + 1, PartyTimer::Abort { channel, version });
            return;
        }
    }

    /// Claims and revocations go first. A new lock waits while another
    /// pending CP on the channel could not survive one more update.
    fn next_action(view: &ChannelView, now: Time, delta: Time) -> Option<usize> {
        let resolving = view.queue.iter().position(|a| !matches!(a, Action::Lock { .. }));
        resolving.or_else(|| {
            let tight = view.confirmed.pending.iter().any(|c| now + 9 * delta > c.timelock);
            (!view.queue.is_empty() && !tight).then_some(0)
        })
    }

    pub(super) fn step_annotation(&self, env: &Env, pid: u64, kind: UpdateKind, channel: ChannelId) -> String {
        let k = env.hops(pid);
        let i = env.position(pid, self.id);
        let step = match (kind, i) {
            (UpdateKind::Lock, Some(i)) => Some(i + 1),
            (UpdateKind::Pay, Some(i)) if i >= 1 && k >= 1 => Some(k + 3 + (k - i)),
            _ => None,
        };
        match step {
            Some(s) => format!("#{pid} {channel} step {s}"),
            None => format!("#{pid} {channel}"),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub(super) fn on_propose(
        &mut self,
        env: &mut Env,
        from: u32,
        channel: ChannelId,
        pid: u64,
        kind: UpdateKind,
        snapshot: ChannelSnapshot,
        sig: Signature,
        onion: Option<Box<OnionPacket>>,
        witness: Option<Witness>,
    ) {
        let me = NodeId::Party(self.id);
        let Some(view) = self.views.get_mut(&channel) else {
            return;
        };
        if view.peer != from {
            return;
        }
        let version = snapshot.version;
        let reject = |env: &mut Env, reason: RejectReason| {
            let m = Msg::Reject {
                channel,
                payment_id: pid,
                version,
                reason,
            };
            env.send(me, NodeId::Party(from), m, format!("{reason:?}"));
        };
        if view.closing || view.closed {
            return reject(env, RejectReason::Closing);
        }
        match &view.flight {
            Flight::Idle => {}
            Flight::Proposed(mine) if from < self.id => {
                let mine = mine.clone();
                view.flight = Flight::Idle;
                if let Some(a) = mine.action.clone() {
                    view.queue.push_front(a);
                }
                view.orphans.insert(mine.snapshot.digest(), mine);
            }
            _ => return reject(env, RejectReason::Busy),
        }
        match self.check_proposal(env, channel, pid, kind, &snapshot, &sig, onion, witness) {
            Ok(()) => {}
            Err(reason) => {
                reject(env, reason);
                self.pump(env, channel);
                return;
            }
        }
        let my_sig = self.sign_state(&snapshot);
        let digest = snapshot.digest();
        let view = self.views.get_mut(&channel).expect("own channel");
        view.book.insert(digest, snapshot.clone());
        view.flight = Flight::Accepted(Update {
            kind,
            payment_id: pid,
            snapshot,
            my_sig,
            peer_sig: Some(sig),
            action: None,
        });
        let m = Msg::Accept {
            channel,
            kind,
            version,
            digest,
            sig: my_sig,
        };
        env.send(
            NodeId::Party(self.id),
            NodeId::Party(from),
            m,
            format!("#{pid} {channel}"),
        );
        let at = env.now() + env.delta;
        self.timer(env, at, PartyTimer::Register { channel, digest });
    }
}
