//! Party-side committee disputes and on-chain closure.

use crate::crypto::{quorum, CommitteeId, QuorumCertificate, Signature, SignerId, Witness};
use crate::ledger::{Authorization, ChannelId, FinalState, LedgerTx};
use crate::simnet::{NodeId, PartyBehavior};

use super::env::Env;
use super::member::dispute_label;
use super::msg::{DisputeKind, Msg};
use super::party::{Flight, Party};

impl Party {
    /// `T - δ`: a payee holding the witness goes to the committee.
    pub(super) fn payee_deadline(&mut self, env: &mut Env, channel: ChannelId, pid: u64) {
        if self.behavior == Some(PartyBehavior::WithholdWitness) {
            return;
        }
        let Some(cp) = self.views[&channel].pending(pid) else {
            return;
        };
        let Some(st) = self.payments.get(&pid) else { return };
        let (Some((inc, _)), Some(w)) = (st.incoming, st.in_witness) else {
            return;
        };
        if inc != channel || env.now() >= cp.timelock {
            return;
        }
        if self.pay_in_flight(channel, pid) {
            return;
        }
        if self.views[&channel].closing {
            self.send_witness_dispute(env, channel, pid);
        } else {
            self.start_dispute(env, channel, DisputeKind::Payee, Some((pid, w)));
        }
    }

    /// `T`: a payer whose CP is still locked asks for it to be removed.
    pub(super) fn payer_deadline(&mut self, env: &mut Env, channel: ChannelId, pid: u64) {
        let view = &self.views[&channel];
        if view.pending(pid).is_none() || view.closing || self.pay_in_flight(channel, pid) {
            return;
        }
        self.start_dispute(env, channel, DisputeKind::Payer, None);
    }

    /// `T + 2δ`: a payee without a witness closes so the CP cannot stay locked.
    pub(super) fn payee_close(&mut self, env: &mut Env, channel: ChannelId, pid: u64) {
        let view = &self.views[&channel];
        if view.pending(pid).is_none() || view.closing || self.pay_in_flight(channel, pid) {
            return;
        }
        self.start_dispute(env, channel, DisputeKind::Close, None);
    }

    fn pay_in_flight(&self, channel: ChannelId, pid: u64) -> bool {
        match &self.views[&channel].flight {
            Flight::Accepted(u) | Flight::Registered(u) => u.payment_id == pid,
            _ => false,
        }
    }

    /// Freezes the channel locally and stops queued updates.
    fn freeze(&mut self, env: &mut Env, channel: ChannelId) {
        let view = self.views.get_mut(&channel).expect("own channel");
        view.closing = true;
        if let Flight::Proposed(u) = std::mem::take(&mut view.flight) {
            view.orphans.insert(u.snapshot.digest(), u.clone());
            self.action_failed(env, channel, u, true);
        } else if !matches!(view.flight, Flight::Idle) {
            // Accepted or registered: let the acknowledgments land.
        }
        let view = self.views.get_mut(&channel).expect("own channel");
        let queued: Vec<_> = view.queue.drain(..).collect();
        for a in queued {
            self.queued_failed(env, channel, a);
        }
    }

    pub(super) fn start_dispute(
        &mut self,
        env: &mut Env,
        channel: ChannelId,
        kind: DisputeKind,
        witness: Option<(u64, Witness)>,
    ) {
        if self.views[&channel].closed {
            return;
        }
        self.freeze(env, channel);
        let view = self.views.get_mut(&channel).expect("own channel");
        view.dispute_kind.get_or_insert(kind);
        let snapshot = view.confirmed.clone();
        view.disputed.insert(snapshot.digest());
        if let Some((pid, _)) = witness {
            view.witness_sent.insert(pid);
        }
        let members: Vec<NodeId> = view.info.members().collect();
        let label = dispute_label(kind);
        env.sched.note(
            NodeId::Party(self.id),
            format!("{label} step 1: {channel} v{}", snapshot.version),
        );
        for m in members {
            let msg = Msg::Dispute {
                channel,
                kind,
                snapshot: snapshot.clone(),
                witness,
            };
            env.send(NodeId::Party(self.id), m, msg, format!("{label} step 1"));
        }
    }

    /// The channel is already closing: hand the witness to the committee.
    pub(super) fn send_witness_dispute(&mut self, env: &mut Env, channel: ChannelId, pid: u64) {
        if self.behavior == Some(PartyBehavior::WithholdWitness) {
            return;
        }
        let Some(st) = self.payments.get(&pid) else { return };
        let (Some((inc, cp)), Some(w)) = (st.incoming, st.in_witness) else {
            return;
        };
        let view = self.views.get_mut(&channel).expect("own channel");
        if inc != channel || view.closed || env.now() >= cp.timelock || !view.witness_sent.insert(pid) {
            return;
        }
        let snapshot = view.confirmed.clone();
        let members: Vec<NodeId> = view.info.members().collect();
        env.sched.note(
            NodeId::Party(self.id),
            format!("payee-dispute step 1: {channel} witness for #{pid}"),
        );
        for m in members {
            let msg = Msg::Dispute {
                channel,
                kind: DisputeKind::Payee,
                snapshot: snapshot.clone(),
                witness: Some((pid, w)),
            };
            env.send(NodeId::Party(self.id), m, msg, "payee-dispute step 1");
        }
    }

    /// Members hold a different latest state: retry with it if we signed it.
    pub(super) fn on_refused(
        &mut self,
        env: &mut Env,
        channel: ChannelId,
        version: u64,
        digest: crate::crypto::Digest,
    ) {
        if self.behavior == Some(PartyBehavior::StaleClosure) {
            return;
        }
        let now = env.now();
        let view = self.views.get_mut(&channel).expect("own channel");
        if view.closed || !view.closing || view.disputed.contains(&digest) {
            return;
        }
        let Some(snapshot) = view.book.get(&digest).cloned() else {
            return;
        };
        view.disputed.insert(digest);
        let witness = snapshot.pending.iter().find_map(|cp| {
            let st = self.payments.get(&cp.payment_id)?;
            let (inc, _) = st.incoming?;
            (inc == channel && now < cp.timelock).then_some((cp.payment_id, st.in_witness?))
        });
        let view = self.views.get_mut(&channel).expect("own channel");
        if let Some((pid, _)) = witness {
            view.witness_sent.insert(pid);
        }
        let kind = if witness.is_some() {
            DisputeKind::Payee
        } else {
            view.dispute_kind.unwrap_or(DisputeKind::Close)
        };
        let members: Vec<NodeId> = view.info.members().collect();
        env.sched.note(
            NodeId::Party(self.id),
            format!("{} step 1: retry with v{version}", dispute_label(kind)),
        );
        for m in members {
            let msg = Msg::Dispute {
                channel,
                kind,
                snapshot: snapshot.clone(),
                witness,
            };
            env.send(NodeId::Party(self.id), m, msg, "retry");
        }
    }

    pub(super) fn on_closure_notice(&mut self, env: &mut Env, channel: ChannelId) {
        if self.views[&channel].closed {
            return;
        }
        self.freeze(env, channel);
        let pids: Vec<u64> = self.views[&channel]
            .confirmed
            .pending
            .iter()
            .map(|c| c.payment_id)
            .collect();
        for pid in pids {
            self.send_witness_dispute(env, channel, pid);
        }
    }

    pub(super) fn on_relay(&mut self, env: &mut Env, channel: ChannelId, pid: u64, w: Witness) {
        let Some(st) = self.payments.get_mut(&pid) else { return };
        let Some((out, cp)) = st.outgoing.or_else(|| {
            st.plan.as_ref()?;
            self.views
                .get(&channel)
                .and_then(|v| v.confirmed.find(pid).copied())
                .map(|cp| (channel, cp))
        }) else {
            return;
        };
        if out != channel || !env.lock.verify(w, cp.condition) {
            return;
        }
        let st = self.payments.get_mut(&pid).expect("present");
        if st.out_witness.is_none() {
            st.out_witness = Some(w);
            env.sched
                .note(NodeId::Party(self.id), format!("#{pid} witness relayed on {channel}"));
        }
        if st.plan.is_some() {
            st.completed_at.get_or_insert(env.now());
            return;
        }
        self.claim_upstream(env, pid);
    }

    pub(super) fn on_closure_sig(&mut self, env: &mut Env, j: u32, state: FinalState, sig: Signature) {
        let channel = state.channel;
        let Some(view) = self.views.get_mut(&channel) else {
            return;
        };
        let committee = CommitteeId(channel.0);
        let d = state.digest();
        if !env.registry.verify_for(&sig, SignerId::Member(committee, j), d) {
            return;
        }
        let initial = crate::channel::ChannelSnapshot::initial(channel, view.info.deposits).digest();
        let entry = view
            .closure_sigs
            .entry(d)
            .or_insert_with(|| (state.clone(), Default::default()));
        entry.1.insert(sig.signer, sig);
        let count = entry.1.len();
        let sigs: Vec<Signature> = entry.1.values().copied().collect();
        if self.behavior == Some(PartyBehavior::StaleClosure)
            && state.state_digest == initial
            && view.confirmed.version > 0
        {
            if view.submitted {
                return;
            }
            view.submitted = true;
            let qc = QuorumCertificate {
                committee,
                digest: d,
                signatures: sigs,
            };
            let auth = Authorization::PartyAndQuorum(self.key.sign(d), qc);
            env.sched
                .note(NodeId::Party(self.id), format!("{channel} stale closure submitted"));
            env.submit(LedgerTx::Closure { state, auth });
            return;
        }
        if view.submitted || count < quorum(view.info.faults()) {
            return;
        }
        let Ok(qc) = QuorumCertificate::assemble(
            committee,
            view.info.committee_size,
            view.info.faults(),
            sigs,
            &env.registry,
        ) else {
            return;
        };
        view.submitted = true;
        let label = view.dispute_kind.map_or("closure", dispute_label);
        env.sched.note(
            NodeId::Party(self.id),
            format!("{label} step 4: submit {channel} closure"),
        );
        let auth = Authorization::PartyAndQuorum(self.key.sign(d), qc);
        env.submit(LedgerTx::Closure {
            state: state.clone(),
            auth,
        });
        self.apply_resolutions(env, &state);
    }

    fn apply_resolutions(&mut self, env: &mut Env, state: &FinalState) {
        for &(pid, paid) in &state.resolved {
            let Some(st) = self.payments.get(&pid) else { continue };
            let payer_here = matches!(st.outgoing, Some((c, _)) if c == state.channel);
            if payer_here && !paid {
                self.revoke_upstream(env, pid);
            }
        }
    }

    /// The ledger included a closure of one of our channels.
    pub fn on_closed(&mut self, env: &mut Env, state: &FinalState) {
        let channel = state.channel;
        if !self.views.contains_key(&channel) {
            return;
        }
        self.freeze(env, channel);
        let view = self.views.get_mut(&channel).expect("own channel");
        view.closed = true;
        view.flight = Flight::Idle;
        env.sched
            .note(NodeId::Party(self.id), format!("{channel} closed on ledger"));
        self.apply_resolutions(env, state);
    }
}
