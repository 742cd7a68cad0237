//! Party-side handling of proposals, acknowledgments and the payment flow.

use crate::channel::{registration_digest, ChannelError, ChannelSnapshot, ConditionalPayment, CpState};
use crate::crypto::{peel_onion, quorum, CommitteeId, Digest, OnionPacket, Signature, SignerId, Witness};
use crate::ledger::ChannelId;
use crate::simnet::{NodeId, PartyBehavior, WormholeVariant};

use super::env::Env;
use super::msg::{Msg, UpdateKind};
use super::party::{Action, Flight, Party, PartyTimer, Update};
use super::plan::{validate_hop, validate_receiver, IncomingCp, OutgoingChannel, RejectReason};

impl Party {
    #[allow(clippy::too_many_arguments)]
    pub(super) fn check_proposal(
        &mut self,
        env: &mut Env,
        channel: ChannelId,
        pid: u64,
        kind: UpdateKind,
        snapshot: &ChannelSnapshot,
        sig: &Signature,
        onion: Option<Box<OnionPacket>>,
        witness: Option<Witness>,
    ) -> Result<(), RejectReason> {
        let now = env.now();
        let delta = env.delta;
        let view = &self.views[&channel];
        if snapshot.channel != channel || snapshot.version != view.confirmed.version + 1 {
            return Err(RejectReason::InvalidUpdate);
        }
        let reg = registration_digest(channel, snapshot.version, snapshot.digest());
        if !env.registry.verify_for(sig, SignerId::Party(view.peer), reg) {
            return Err(RejectReason::InvalidUpdate);
        }
        let late = |s: &ChannelSnapshot| s.pending.iter().any(|c| now + 4 * delta > c.timelock);
        match kind {
            UpdateKind::Lock => {
                let cp = snapshot.find(pid).copied().ok_or(RejectReason::InvalidUpdate)?;
                if view.confirmed.find(pid).is_some() || cp.payer != view.side.other() {
                    return Err(RejectReason::InvalidUpdate);
                }
                let fresh = ConditionalPayment {
                    state: CpState::Unlocked,
                    ..cp
                };
                let expected = view
                    .confirmed
                    .with_locked(fresh, 4 * delta, snapshot.salt)
                    .map_err(|e| match e {
                        ChannelError::TimelockSpacing { .. } => RejectReason::Spacing,
                        _ => RejectReason::InvalidUpdate,
                    })?;
                if expected != *snapshot {
                    return Err(RejectReason::InvalidUpdate);
                }
                if late(snapshot) {
                    return Err(RejectReason::Deadline);
                }
                let onion = onion.ok_or(RejectReason::Onion)?;
                let (payload, next) = peel_onion(&onion, &self.onion_key).map_err(|_| RejectReason::Onion)?;
                if payload.payment_id != pid {
                    return Err(RejectReason::Onion);
                }
                let incoming = IncomingCp {
                    amount: cp.amount,
                    timelock: cp.timelock,
                    condition: cp.condition,
                };
                let st = match payload.next_party {
                    Some(j) => {
                        let out_id = env.channel_between(self.id, j).map(|c| c.id);
                        let out = out_id
                            .and_then(|id| self.views.get(&id))
                            .filter(|v| !v.closing && !v.closed)
                            .map(|v| OutgoingChannel {
                                balance: v.confirmed.balance(v.side),
                                policy: v.info.policy,
                            });
                        validate_hop(&env.lock, &incoming, &payload, out)?;
                        let out_id = out_id.expect("validated");
                        let l = payload.lock.expect("validated");
                        let out_cp = ConditionalPayment {
                            payment_id: pid,
                            payer: self.views[&out_id].side,
                            amount: payload.amount,
                            timelock: payload.timelock,
                            condition: l.cond,
                            state: CpState::Unlocked,
                        };
                        super::party::PaymentState {
                            incoming: Some((channel, cp)),
                            outgoing: Some((out_id, out_cp)),
                            next_onion: Some(Box::new(next)),
                            share: Some(l.share),
                            ..Default::default()
                        }
                    }
                    None => {
                        let inv = self.invoices.get(&pid).ok_or(RejectReason::ReceiverAmount)?;
                        if inv.sender == self.id {
                            return Err(RejectReason::ReceiverAmount);
                        }
                        validate_receiver(&incoming, inv.value, inv.final_timelock, now)?;
                        super::party::PaymentState {
                            incoming: Some((channel, cp)),
                            ..Default::default()
                        }
                    }
                };
                self.payments.insert(pid, st);
                Ok(())
            }
            UpdateKind::Pay => {
                let cp = view.confirmed.find(pid).copied().ok_or(RejectReason::InvalidUpdate)?;
                if cp.payer != view.side {
                    return Err(RejectReason::InvalidUpdate);
                }
                let w = witness.ok_or(RejectReason::InvalidUpdate)?;
                if !env.lock.verify(w, cp.condition) {
                    return Err(RejectReason::Amhl);
                }
                if now >= cp.timelock {
                    return Err(RejectReason::Deadline);
                }
                if let Some(st) = self.payments.get_mut(&pid) {
                    st.out_witness.get_or_insert(w);
                }
                let view = &self.views[&channel];
                let expected = view
                    .confirmed
                    .with_resolved(pid, CpState::Paid, snapshot.salt)
                    .map_err(|_| RejectReason::InvalidUpdate)?;
                if expected != *snapshot {
                    return Err(RejectReason::InvalidUpdate);
                }
                if late(&view.confirmed) {
                    return Err(RejectReason::Deadline);
                }
                if self.behavior == Some(PartyBehavior::RefuseCooperativePay) {
                    return Err(RejectReason::Refused);
                }
                Ok(())
            }
            UpdateKind::Revoke => {
                let cp = view.confirmed.find(pid).copied().ok_or(RejectReason::InvalidUpdate)?;
                if cp.payer != view.side {
                    return Err(RejectReason::InvalidUpdate);
                }
                let expected = view
                    .confirmed
                    .with_resolved(pid, CpState::Revoked, snapshot.salt)
                    .map_err(|_| RejectReason::InvalidUpdate)?;
                if expected != *snapshot {
                    return Err(RejectReason::InvalidUpdate);
                }
                if late(&view.confirmed) {
                    return Err(RejectReason::Deadline);
                }
                Ok(())
            }
        }
    }

    pub(super) fn on_accept(
        &mut self,
        env: &mut Env,
        from: u32,
        channel: ChannelId,
        version: u64,
        digest: Digest,
        sig: Signature,
    ) {
        let Some(view) = self.views.get_mut(&channel) else {
            return;
        };
        if view.peer != from {
            return;
        }
        let Flight::Proposed(u) = &view.flight else { return };
        if u.snapshot.version != version || u.snapshot.digest() != digest {
            return;
        }
        if !env.registry.verify_for(
            &sig,
            SignerId::Party(from),
            registration_digest(channel, version, digest),
        ) {
            return;
        }
        let mut u = u.clone();
        u.peer_sig = Some(sig);
        view.flight = Flight::Registered(u.clone());
        self.broadcast_register(env, channel, &u);
    }

    pub(super) fn broadcast_register(&mut self, env: &mut Env, channel: ChannelId, u: &Update) {
        let view = &self.views[&channel];
        let peer_sig = u.peer_sig.expect("countersigned");
        let sigs = match view.side {
            crate::channel::Side::A => (u.my_sig, peer_sig),
            crate::channel::Side::B => (peer_sig, u.my_sig),
        };
        let digest = u.snapshot.digest();
        let version = u.snapshot.version;
        let members: Vec<NodeId> = view.info.members().collect();
        for (j, m) in members.into_iter().enumerate() {
            let d = if self.behavior == Some(PartyBehavior::Equivocate) && j % 2 == 1 {
                Digest::of(&version.to_be_bytes())
            } else {
                digest
            };
            let msg = Msg::Register {
                channel,
                version,
                digest: d,
                sigs,
            };
            env.send(
                NodeId::Party(self.id),
                m,
                msg,
                format!("#{} {channel} v{version}", u.payment_id),
            );
        }
    }

    pub(super) fn on_reject(
        &mut self,
        env: &mut Env,
        from: u32,
        channel: ChannelId,
        version: u64,
        reason: RejectReason,
    ) {
        let Some(view) = self.views.get_mut(&channel) else {
            return;
        };
        if view.peer != from {
            return;
        }
        let Flight::Proposed(u) = &view.flight else { return };
        if u.snapshot.version != version {
            return;
        }
        let u = u.clone();
        view.flight = Flight::Idle;
        env.sched.note(
            NodeId::Party(self.id),
            format!("#{} {channel} v{version} rejected: {reason:?}", u.payment_id),
        );
        if reason == RejectReason::Busy {
            if let Some(a) = u.action.clone() {
                view.queue.push_front(a);
            }
            self.orphan(channel, u);
            let at = env.now() + 4 * env.delta;
            self.timer(env, at, PartyTimer::Retry { channel });
            return;
        }
        self.orphan(channel, u.clone());
        self.action_failed(env, channel, u, true);
        self.pump(env, channel);
    }

    pub(super) fn on_ack(
        &mut self,
        env: &mut Env,
        j: u32,
        channel: ChannelId,
        version: u64,
        digest: Digest,
        sig: Signature,
    ) {
        let Some(view) = self.views.get_mut(&channel) else {
            return;
        };
        let signer = SignerId::Member(CommitteeId(channel.0), j);
        if !env
            .registry
            .verify_for(&sig, signer, registration_digest(channel, version, digest))
        {
            return;
        }
        let acks = view.acks.entry(digest).or_default();
        acks.insert(j);
        if acks.len() != quorum(view.info.faults()) {
            return;
        }
        match &view.flight {
            Flight::Proposed(u) | Flight::Accepted(u) | Flight::Registered(u) if u.snapshot.digest() == digest => {
                let u = u.clone();
                self.confirm(env, channel, u);
            }
            Flight::Accepted(_) | Flight::Registered(_) => {}
            _ => {
                let Some(o) = view.orphans.get(&digest).cloned() else {
                    return;
                };
                if o.snapshot.version != view.confirmed.version + 1 {
                    return;
                }
                if let Flight::Proposed(mine) = std::mem::take(&mut view.flight) {
                    if let Some(a) = mine.action.clone() {
                        view.queue.push_front(a);
                    }
                    view.orphans.insert(mine.snapshot.digest(), mine);
                }
                env.sched.note(
                    NodeId::Party(self.id),
                    format!("#{} {channel} v{version} registered late", o.payment_id),
                );
                self.confirm(env, channel, o);
            }
        }
    }

    fn confirm(&mut self, env: &mut Env, channel: ChannelId, u: Update) {
        let view = self.views.get_mut(&channel).expect("own channel");
        let cp = view
            .confirmed
            .find(u.payment_id)
            .or_else(|| u.snapshot.find(u.payment_id))
            .copied()
            .expect("update touches its payment");
        view.confirmed = u.snapshot.clone();
        view.flight = Flight::Idle;
        let v = view.confirmed.version;
        view.orphans.retain(|_, o| o.snapshot.version > v);
        let payer = cp.payer == view.side;
        env.sched.note(
            NodeId::Party(self.id),
            format!("#{} {channel} v{v} {:?} confirmed", u.payment_id, u.kind),
        );
        if self.behavior == Some(PartyBehavior::StaleClosure) && !view.stale_tried {
            view.stale_tried = true;
            let stale = ChannelSnapshot::initial(channel, view.info.deposits);
            let members: Vec<NodeId> = view.info.members().collect();
            for m in members {
                let msg = Msg::Dispute {
                    channel,
                    kind: super::msg::DisputeKind::Close,
                    snapshot: stale.clone(),
                    witness: None,
                };
                env.send(NodeId::Party(self.id), m, msg, "stale");
            }
        }
        self.on_confirmed(env, channel, u.kind, cp, payer);
        self.pump(env, channel);
    }

    fn on_confirmed(
        &mut self,
        env: &mut Env,
        channel: ChannelId,
        kind: UpdateKind,
        cp: ConditionalPayment,
        payer: bool,
    ) {
        let pid = cp.payment_id;
        let delta = env.delta;
        match (kind, payer) {
            (UpdateKind::Lock, true) => {
                self.timer(
                    env,
                    cp.timelock,
                    PartyTimer::PayerDeadline {
                        channel,
                        payment_id: pid,
                    },
                );
            }
            (UpdateKind::Lock, false) => {
                self.timer(
                    env,
                    cp.timelock.saturating_sub(delta),
                    PartyTimer::PayeeDeadline {
                        channel,
                        payment_id: pid,
                    },
                );
                self.timer(
                    env,
                    cp.timelock + 2 * delta,
                    PartyTimer::PayeeClose {
                        channel,
                        payment_id: pid,
                    },
                );
                let Some(st) = self.payments.get_mut(&pid) else { return };
                if let Some((out, out_cp)) = st.outgoing {
                    let onion = st.next_onion.take();
                    self.enqueue(
                        env,
                        out,
                        Action::Lock {
                            payment_id: pid,
                            cp: out_cp,
                            onion,
                        },
                    );
                } else if let Some(inv) = self.invoices.get(&pid).copied() {
                    let k = env.hops(pid);
                    env.send(
                        NodeId::Party(self.id),
                        NodeId::Party(inv.sender),
                        Msg::Locked { payment_id: pid },
                        format!("#{pid} step {}", k + 1),
                    );
                }
            }
            (UpdateKind::Pay, true) => {
                if let Some(st) = self.payments.get_mut(&pid).filter(|s| s.plan.is_some()) {
                    st.completed_at.get_or_insert(env.sched.now());
                    env.sched.note(NodeId::Party(self.id), format!("#{pid} complete"));
                } else {
                    self.claim_upstream(env, pid);
                }
            }
            (UpdateKind::Revoke, true) => {
                if self.payments.get(&pid).is_some_and(|s| s.plan.is_some()) {
                    env.sched.note(NodeId::Party(self.id), format!("#{pid} failed"));
                } else {
                    self.revoke_upstream(env, pid);
                }
            }
            (UpdateKind::Pay, false) | (UpdateKind::Revoke, false) => {}
        }
    }

    /// A proposal this party made did not go through.
    pub(super) fn action_failed(&mut self, env: &mut Env, channel: ChannelId, u: Update, signed: bool) {
        match u.action {
            Some(Action::Lock { payment_id, .. }) => self.lock_failed(env, payment_id, signed),
            Some(a) => self.queued_failed(env, channel, a),
            None => {}
        }
    }

    /// A queued action could not be started.
    pub(super) fn queued_failed(&mut self, env: &mut Env, channel: ChannelId, action: Action) {
        match action {
            Action::Lock { payment_id, .. } => self.lock_failed(env, payment_id, false),
            Action::Pay { payment_id, .. } => self.pay_fallback(env, channel, payment_id),
            Action::Revoke { .. } => {}
        }
    }

    fn lock_failed(&mut self, env: &mut Env, pid: u64, signed: bool) {
        let Some(st) = self.payments.get_mut(&pid) else { return };
        if st.lock_failed {
            return;
        }
        st.lock_failed = true;
        env.sched.note(NodeId::Party(self.id), format!("#{pid} lock failed"));
        if st.plan.is_some() {
            env.sched.note(NodeId::Party(self.id), format!("#{pid} failed"));
            return;
        }
        if signed {
            // The peer holds our signature and may still register the lock.
            let at = env.now() + 2 * env.delta + 1;
            self.timer(env, at, PartyTimer::UpstreamRevoke { payment_id: pid });
        } else {
            self.revoke_upstream(env, pid);
        }
    }

    pub(super) fn revoke_upstream(&mut self, env: &mut Env, pid: u64) {
        let Some(st) = self.payments.get(&pid) else { return };
        if let Some((out, _)) = st.outgoing {
            if self.views[&out].pending(pid).is_some() {
                return;
            }
        }
        if st.out_witness.is_some() || st.revoking_upstream {
            return;
        }
        let Some((inc, _)) = st.incoming else { return };
        if self.views[&inc].pending(pid).is_none() {
            return;
        }
        self.payments.get_mut(&pid).expect("present").revoking_upstream = true;
        self.enqueue(env, inc, Action::Revoke { payment_id: pid });
    }

    /// Cooperative claim was not possible: dispute now if the payee deadline
    /// has already passed, otherwise the deadline timer takes over.
    fn pay_fallback(&mut self, env: &mut Env, channel: ChannelId, pid: u64) {
        let Some(cp) = self.views[&channel].pending(pid) else {
            return;
        };
        let now = env.now();
        if now >= cp.timelock {
            return;
        }
        if self.views[&channel].closing || now + env.delta >= cp.timelock {
            self.payee_deadline(env, channel, pid);
        }
    }

    /// Learned the witness of the outgoing CP: derive the upstream one and claim.
    pub(super) fn claim_upstream(&mut self, env: &mut Env, pid: u64) {
        let Some(st) = self.payments.get(&pid) else { return };
        if st.claimed_upstream || st.plan.is_some() {
            return;
        }
        let (Some(y), Some(share), Some((_, in_cp))) = (st.out_witness, st.share, st.incoming) else {
            return;
        };
        let y_in = env.lock.sub(y, share);
        if !env.lock.verify(y_in, in_cp.condition) {
            return;
        }
        if self.behavior == Some(PartyBehavior::WithholdWitness) {
            return;
        }
        if let Some((partner, variant)) = self.wormhole() {
            let upstream_partner = matches!(
                (env.position(pid, partner), env.position(pid, self.id)),
                (Some(a), Some(b)) if a < b
            );
            if upstream_partner {
                if variant != WormholeVariant::Withhold {
                    let m = Msg::WormholeLeak {
                        payment_id: pid,
                        witness: y_in,
                    };
                    env.send(NodeId::Party(self.id), NodeId::Party(partner), m, format!("#{pid}"));
                }
                if variant != WormholeVariant::Fallback {
                    return;
                }
            }
        }
        let st = self.payments.get_mut(&pid).expect("present");
        st.claimed_upstream = true;
        st.in_witness = Some(y_in);
        self.claim_incoming(env, pid);
    }

    /// Claims the incoming CP with the known witness.
    pub(super) fn claim_incoming(&mut self, env: &mut Env, pid: u64) {
        let Some(st) = self.payments.get(&pid) else { return };
        let (Some((ch, cp)), Some(w)) = (st.incoming, st.in_witness) else {
            return;
        };
        let now = env.now();
        if now >= cp.timelock {
            return;
        }
        let view = &self.views[&ch];
        if view.closed {
            return;
        }
        if view.closing {
            self.send_witness_dispute(env, ch, pid);
            return;
        }
        if view.pending(pid).is_none() {
            return;
        }
        self.enqueue(
            env,
            ch,
            Action::Pay {
                payment_id: pid,
                witness: w,
            },
        );
    }

    pub(super) fn on_locked(&mut self, env: &mut Env, from: u32, pid: u64) {
        let Some(st) = self.payments.get_mut(&pid) else { return };
        let Some(plan) = &st.plan else { return };
        if st.revealed || plan.path.last() != Some(&from) {
            return;
        }
        let Some(info) = env.channel_between(plan.path[0], plan.path[1]) else {
            return;
        };
        if self.views[&info.id].pending(pid).is_none() {
            return;
        }
        st.revealed = true;
        let k = plan.hops();
        let w = plan.witnesses[k - 1];
        env.send(
            NodeId::Party(self.id),
            NodeId::Party(from),
            Msg::Reveal {
                payment_id: pid,
                witness: w,
            },
            format!("#{pid} step {}", k + 2),
        );
    }

    pub(super) fn on_reveal(&mut self, env: &mut Env, from: u32, pid: u64, w: Witness) {
        let Some(inv) = self.invoices.get(&pid) else { return };
        if inv.sender != from {
            return;
        }
        let Some(st) = self.payments.get_mut(&pid) else { return };
        let Some((_, cp)) = st.incoming else { return };
        if !env.lock.verify(w, cp.condition) || env.now() >= cp.timelock {
            return;
        }
        st.in_witness = Some(w);
        if self.behavior == Some(PartyBehavior::WithholdWitness) {
            return;
        }
        self.claim_incoming(env, pid);
    }

    /// A colluder hands over a witness it learned downstream.
    pub(super) fn on_leak(&mut self, env: &mut Env, pid: u64, w: Witness) {
        let Some(st) = self.payments.get(&pid) else { return };
        let Some((_, cp)) = st.incoming else { return };
        let mut candidates = vec![w];
        if let Some(l) = st.share {
            candidates.push(env.lock.sub(w, l));
        }
        match candidates.into_iter().find(|&c| env.lock.verify(c, cp.condition)) {
            Some(y) => {
                let st = self.payments.get_mut(&pid).expect("present");
                st.in_witness = Some(y);
                st.claimed_upstream = true;
                self.claim_incoming(env, pid);
            }
            None => env.sched.note(
                NodeId::Party(self.id),
                format!("#{pid} leaked witness does not open incoming lock"),
            ),
        }
    }
}
