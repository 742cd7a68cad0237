//! Committee member of one channel: registers digests and settles disputes.

use std::collections::BTreeMap;

use crate::channel::{registration_digest, ChannelSnapshot, MemberStore};
use crate::crypto::{CommitteeId, Digest, KeyPair, Signature, SignerId, Witness};
use crate::ledger::{ChannelId, FinalState};
use crate::simnet::{MemberBehavior, NodeId};

use super::env::Env;
use super::msg::{DisputeKind, Msg};

struct Closing {
    kind: DisputeKind,
    snapshot: ChannelSnapshot,
    resolved: BTreeMap<u64, Option<bool>>,
    signed: bool,
}

pub struct Member {
    pub channel: ChannelId,
    pub index: u32,
    key: KeyPair,
    behavior: Option<MemberBehavior>,
    store: MemberStore,
    initial: ChannelSnapshot,
    closing: Option<Closing>,
    timers: BTreeMap<u64, u64>,
    next_tag: u64,
}

impl Member {
    pub fn new(env: &Env, channel: ChannelId, index: u32, behavior: Option<MemberBehavior>) -> Self {
        let info = env.info(channel);
        Self {
            channel,
            index,
            key: env.registry.keypair(SignerId::Member(CommitteeId(channel.0), index)),
            behavior,
            store: MemberStore::new(channel, info.parties),
            initial: ChannelSnapshot::initial(channel, info.deposits),
            closing: None,
            timers: BTreeMap::new(),
            next_tag: 0,
        }
    }

    pub fn node(&self) -> NodeId {
        NodeId::Member(CommitteeId(self.channel.0), self.index)
    }

    pub fn store(&self) -> &MemberStore {
        &self.store
    }

    pub fn is_honest(&self) -> bool {
        self.behavior.is_none() || self.behavior == Some(MemberBehavior::StallLeader)
    }

    pub fn is_closing(&self) -> bool {
        self.closing.is_some()
    }

    fn latest(&self) -> (u64, Digest) {
        match self.store.latest() {
            Some(r) => (r.version, r.digest),
            None => (0, self.initial.digest()),
        }
    }

    pub fn on_message(&mut self, env: &mut Env, from: NodeId, msg: Msg) {
        if self.behavior == Some(MemberBehavior::Silent) {
            return;
        }
        let NodeId::Party(sender) = from else {
            return;
        };
        match msg {
            Msg::Register {
                channel,
                version,
                digest,
                sigs,
            } if channel == self.channel => self.on_register(env, version, digest, sigs),
            Msg::Dispute {
                channel,
                kind,
                snapshot,
                witness,
            } if channel == self.channel => self.on_dispute(env, sender, kind, snapshot, witness),
            _ => {}
        }
    }

    fn on_register(&mut self, env: &mut Env, version: u64, digest: Digest, sigs: (Signature, Signature)) {
        if self.closing.is_some() {
            return;
        }
        let before = self.store.history().len();
        let now = env.now();
        let result = self
            .store
            .register(&self.key, version, digest, sigs, now, &env.registry);
        let first = self.store.history().len() > before;
        let ack = match (self.behavior, result) {
            (Some(MemberBehavior::WithholdAcks), _) => None,
            (Some(MemberBehavior::SignAnything), _) => {
                Some(self.key.sign(registration_digest(self.channel, version, digest)))
            }
            (_, Ok(sig)) if first => Some(sig),
            _ => None,
        };
        if let Some(sig) = ack {
            let me = self.node();
            for p in [self.store.parties.0, self.store.parties.1] {
                let m = Msg::Ack {
                    channel: self.channel,
                    version,
                    digest,
                    sig,
                };
                env.send(me, NodeId::Party(p), m, format!("{} v{version}", self.channel));
            }
        }
    }

    fn on_dispute(
        &mut self,
        env: &mut Env,
        sender: u32,
        kind: DisputeKind,
        snapshot: ChannelSnapshot,
        witness: Option<(u64, Witness)>,
    ) {
        let me = self.node();
        if self.behavior == Some(MemberBehavior::SignAnything) {
            let state = FinalState {
                channel: self.channel,
                balances: snapshot.settle_all(|_| false),
                state_digest: snapshot.digest(),
                resolved: snapshot.pending.iter().map(|c| (c.payment_id, false)).collect(),
            };
            let sig = self.key.sign(state.digest());
            env.send(me, NodeId::Party(sender), Msg::ClosureSig { state, sig }, "unchecked");
            return;
        }
        if self.closing.is_none() {
            let (version, digest) = self.latest();
            if snapshot.channel != self.channel || snapshot.digest() != digest {
                let m = Msg::DisputeRefused {
                    channel: self.channel,
                    version,
                    digest,
                };
                env.send(me, NodeId::Party(sender), m, "digest mismatch");
                return;
            }
            let peer = if self.store.parties.0 == sender {
                self.store.parties.1
            } else {
                self.store.parties.0
            };
            let label = dispute_label(kind);
            env.sched.note(me, format!("{label} step 2: digest matches v{version}"));
            env.send(
                me,
                NodeId::Party(peer),
                Msg::ClosureNotice { channel: self.channel },
                format!("{label} step 2"),
            );
            for cp in &snapshot.pending {
                let tag = self.next_tag;
                self.next_tag += 1;
                self.timers.insert(tag, cp.payment_id);
                env.sched.set_timer(me, cp.timelock + 1, tag);
            }
            self.closing = Some(Closing {
                kind,
                resolved: snapshot.pending.iter().map(|c| (c.payment_id, None)).collect(),
                snapshot,
                signed: false,
            });
        }
        if let Some((id, w)) = witness {
            self.offer_witness(env, id, w);
        }
        self.expire(env);
        self.try_finish(env);
    }

    fn offer_witness(&mut self, env: &mut Env, payment_id: u64, w: Witness) {
        let now = env.now();
        let me = self.node();
        let Some(c) = self.closing.as_mut() else { return };
        let Some(cp) = c.snapshot.find(payment_id).copied() else {
            return;
        };
        if c.resolved.get(&payment_id) != Some(&None) {
            return;
        }
        if now > cp.timelock {
            env.sched.note(me, format!("witness for #{payment_id} after timelock"));
            return;
        }
        if !env.lock.verify(w, cp.condition) {
            env.sched.note(me, format!("invalid witness for #{payment_id}"));
            return;
        }
        c.resolved.insert(payment_id, Some(true));
        let payer = match cp.payer {
            crate::channel::Side::A => self.store.parties.0,
            crate::channel::Side::B => self.store.parties.1,
        };
        env.sched.note(
            me,
            format!("payee-dispute step 3: witness for #{payment_id} before timelock"),
        );
        let m = Msg::WitnessRelay {
            channel: self.channel,
            payment_id,
            witness: w,
        };
        env.send(me, NodeId::Party(payer), m, "payee-dispute step 3");
    }

    fn expire(&mut self, env: &mut Env) {
        let now = env.now();
        let me = self.node();
        let Some(c) = self.closing.as_mut() else { return };
        for cp in &c.snapshot.pending {
            let r = c.resolved.get_mut(&cp.payment_id).expect("tracked");
            if r.is_none() && now > cp.timelock {
                *r = Some(false);
                if c.kind == DisputeKind::Payer {
                    env.sched.note(
                        me,
                        format!("payer-dispute step 3: timelock of #{} passed", cp.payment_id),
                    );
                }
            }
        }
    }

    fn try_finish(&mut self, env: &mut Env) {
        let me = self.node();
        let withhold = self.behavior == Some(MemberBehavior::WithholdAcks);
        let Some(c) = self.closing.as_mut() else { return };
        if c.signed || c.resolved.values().any(Option::is_none) {
            return;
        }
        c.signed = true;
        let resolved: Vec<(u64, bool)> = c.resolved.iter().map(|(&id, r)| (id, r.expect("resolved"))).collect();
        let state = FinalState {
            channel: self.channel,
            balances: c
                .snapshot
                .settle_all(|id| resolved.iter().any(|&(r, paid)| r == id && paid)),
            state_digest: c.snapshot.digest(),
            resolved,
        };
        if withhold {
            return;
        }
        let label = dispute_label(c.kind);
        let step = 3;
        env.sched.note(me, format!("{label} step {step}: sign final state"));
        let sig = self.key.sign(state.digest());
        for p in [self.store.parties.0, self.store.parties.1] {
            let m = Msg::ClosureSig {
                state: state.clone(),
                sig,
            };
            env.send(me, NodeId::Party(p), m, label);
        }
    }

    pub fn on_timer(&mut self, env: &mut Env, tag: u64) {
        if self.behavior == Some(MemberBehavior::Silent) || self.timers.remove(&tag).is_none() {
            return;
        }
        self.expire(env);
        self.try_finish(env);
    }
}

pub(crate) fn dispute_label(kind: DisputeKind) -> &'static str {
    match kind {
        DisputeKind::Payee => "payee-dispute",
        DisputeKind::Payer => "payer-dispute",
        DisputeKind::Close => "close-dispute",
    }
}
