//! A committee member: orders entries with its peers and applies them to its
//! copy of the channel account.

use std::collections::{BTreeMap, BTreeSet};

use crate::broadcast::{OrderAction, OrderMsg, OrderingConfig, OrderingReplica};
use crate::crypto::{CommitteeId, Digest, KeyPair, Signature, SignerId};
use crate::ledger::ChannelId;
use crate::simnet::{MemberBehavior, NodeId};

use super::account::{CommitteeAccount, Effect};
use super::env::PEnv;
use super::msg::{close_digest, Entry, Kind, Notice, PMsg, PaymentMsg, Source};

pub struct Member {
    pub committee: u32,
    pub index: u32,
    behavior: Option<MemberBehavior>,
    key: KeyPair,
    replica: OrderingReplica<Entry>,
    account: CommitteeAccount,
    applied: usize,
    /// Transfers from adjacent committees, by sender committee and digest.
    inbox: BTreeMap<(u32, Digest), BTreeMap<u32, Signature>>,
    forwarded: BTreeSet<(u32, Digest)>,
}

impl Member {
    pub fn new(env: &PEnv, committee: u32, index: u32, behavior: Option<MemberBehavior>) -> Self {
        let info = *env.info(committee);
        let cfg = OrderingConfig {
            committee: CommitteeId(committee),
            n: info.n,
            f: info.f(),
            model: env.model,
            delta: env.delta,
        };
        let account = CommitteeAccount::new(
            env.mode,
            committee,
            info.parties,
            info.deposits,
            info.fee,
            env.registry.committee_onion_key(CommitteeId(committee)),
        );
        Self {
            committee,
            index,
            behavior,
            key: env.registry.keypair(SignerId::Member(CommitteeId(committee), index)),
            replica: OrderingReplica::new(cfg, index, &env.registry, behavior),
            account,
            applied: 0,
            inbox: BTreeMap::new(),
            forwarded: BTreeSet::new(),
        }
    }

    pub fn is_honest(&self) -> bool {
        self.behavior.is_none()
    }

    pub fn account(&self) -> &CommitteeAccount {
        &self.account
    }

    pub fn log_len(&self) -> usize {
        self.replica.log().len()
    }

    /// Digests of the decided entries, in order.
    pub fn log_digests(&self) -> Vec<Digest> {
        use crate::broadcast::Payload;
        self.replica.log().iter().map(|e| e.payload.digest()).collect()
    }

    fn node(&self) -> NodeId {
        NodeId::Member(CommitteeId(self.committee), self.index)
    }

    fn silent(&self) -> bool {
        self.behavior == Some(MemberBehavior::Silent)
    }

    fn forges(&self) -> bool {
        self.behavior == Some(MemberBehavior::SignAnything)
    }

    pub fn on_message(&mut self, env: &mut PEnv, from: NodeId, msg: PMsg) {
        if self.silent() {
            return;
        }
        let now = env.now();
        let actions = match msg {
            PMsg::Request { msg, sig } => {
                let ok = payer_of(&msg).is_some_and(|p| {
                    self.is_party(p) && env.registry.verify_for(&sig, SignerId::Party(p), msg.digest())
                });
                if !ok || msg.kind != Kind::Pay || !self.account.admits(&msg) {
                    env.sched.note(self.node(), format!("drop request from {from}"));
                    return;
                }
                self.replica.submit(
                    Entry::Msg {
                        msg,
                        from: None,
                        proof: vec![sig],
                    },
                    now,
                )
            }
            PMsg::Transfer { from: c, msg, sig } => {
                let Some(entry) = self.collect(env, c, msg, sig) else {
                    return;
                };
                self.replica.submit(entry, now)
            }
            PMsg::Order(m) => self.replica.on_message(m, now),
            PMsg::CloseRequest { channel, sig } => {
                let SignerId::Party(p) = sig.signer else { return };
                if channel.0 != self.committee
                    || !self.is_party(p)
                    || !env.registry.verify_for(&sig, sig.signer, close_digest(channel, p))
                {
                    return;
                }
                self.replica.submit(Entry::Close { party: p, sig }, now)
            }
            PMsg::Notify { .. } | PMsg::ClosureSig { .. } => return,
        };
        self.apply(env, actions);
    }

    pub fn on_timer(&mut self, env: &mut PEnv, tag: u64) {
        let now = env.now();
        let actions = self.replica.on_timer(tag, now);
        self.apply(env, actions);
    }

    fn is_party(&self, p: u32) -> bool {
        p == self.account.parties.0 || p == self.account.parties.1
    }

    /// Gathers member signatures on a transfer; returns the entry once `f + 1`
    /// distinct members of the sending committee vouch for it.
    fn collect(&mut self, env: &PEnv, c: u32, msg: PaymentMsg, sig: Signature) -> Option<Entry> {
        let info = env.committees.get(c as usize)?;
        let d = msg.digest();
        let SignerId::Member(CommitteeId(sc), j) = sig.signer else {
            return None;
        };
        if sc != c || j as usize >= info.n || !env.registry.verify_for(&sig, sig.signer, d) {
            return None;
        }
        if self.forwarded.contains(&(c, d)) {
            return None;
        }
        let sigs = self.inbox.entry((c, d)).or_default();
        sigs.insert(j, sig);
        if sigs.len() < info.f() + 1 || (msg.kind == Kind::Pay && !self.account.admits(&msg)) {
            return None;
        }
        let proof = self.inbox.remove(&(c, d)).expect("present").into_values().collect();
        self.forwarded.insert((c, d));
        Some(Entry::Msg {
            msg,
            from: Some(c),
            proof,
        })
    }

    fn apply(&mut self, env: &mut PEnv, actions: Vec<OrderAction<Entry>>) {
        let me = self.node();
        for a in actions {
            match a {
                OrderAction::Send { to, msg } => {
                    let label = order_note(&msg);
                    env.send(
                        me,
                        NodeId::Member(CommitteeId(self.committee), to),
                        PMsg::Order(msg),
                        label,
                    );
                }
                OrderAction::SetTimer { at, tag } => env.sched.set_timer(me, at, tag),
                OrderAction::Decide { .. } => {}
            }
        }
        // Decided entries are taken from the log so that catch-up decisions
        // are applied too.
        while self.applied < self.replica.log().len() {
            let entry = self.replica.log()[self.applied].payload.clone();
            self.applied += 1;
            self.execute(env, entry);
        }
    }

    /// Same verdict at every honest member, since it depends only on the
    /// entry.
    /// Returns the vouching committee (`Some(None)` for a party request).
    fn proof_ok(&self, env: &PEnv, msg: &PaymentMsg, proof: &[Signature]) -> Option<Option<u32>> {
        let d = msg.digest();
        if let [sig] = proof {
            if let SignerId::Party(p) = sig.signer {
                let ok = msg.kind == Kind::Pay
                    && payer_of(msg) == Some(p)
                    && self.is_party(p)
                    && env.registry.verify_for(sig, sig.signer, d);
                return ok.then_some(None);
            }
        }
        let mut signers = BTreeSet::new();
        let mut committee = None;
        for s in proof {
            let SignerId::Member(CommitteeId(c), j) = s.signer else {
                return None;
            };
            if committee.is_some_and(|x| x != c) || !env.registry.verify_for(s, s.signer, d) {
                return None;
            }
            committee = Some(c);
            signers.insert(j);
        }
        let c = committee?;
        let info = env.committees.get(c as usize)?;
        if c == self.committee || env.topo.shared(c, self.committee).is_none() {
            return None;
        }
        if let (Kind::Pay, Source::Committee(s)) = (msg.kind, msg.source) {
            if s != c {
                return None;
            }
        }
        let ok = signers.iter().all(|j| (*j as usize) < info.n) && signers.len() > info.f();
        ok.then_some(Some(c))
    }

    fn execute(&mut self, env: &mut PEnv, entry: Entry) {
        let effects = match entry {
            Entry::Msg { msg, from, proof } => {
                let Some(from) = self.proof_ok(env, &msg, &proof).filter(|f| *f == from) else {
                    env.sched.note(self.node(), "skip entry with bad proof");
                    return;
                };
                self.account.execute(&msg, from, &env.topo)
            }
            Entry::Close { .. } => self.account.execute_close(),
        };
        for e in effects {
            self.perform(env, e);
        }
    }

    fn perform(&mut self, env: &mut PEnv, effect: Effect) {
        let me = self.node();
        let channel = ChannelId(self.committee);
        match effect {
            Effect::Send { committee, mut msg } => {
                let d = msg.digest();
                env.logical.insert((self.committee, d));
                if self.forges() {
                    msg.amount += 1;
                }
                let sig = self.key.sign(msg.digest());
                let note = format!("{:?} {:?}/{} → W{committee}", msg.kind, msg.source, msg.id);
                let targets: Vec<NodeId> = env.info(committee).members().collect();
                for to in targets {
                    env.send(
                        me,
                        to,
                        PMsg::Transfer {
                            from: self.committee,
                            msg: msg.clone(),
                            sig,
                        },
                        note.clone(),
                    );
                }
            }
            Effect::Notify { parties, mut notice } => {
                if self.forges() {
                    match &mut notice {
                        Notice::Locked { amount, .. } | Notice::Done { amount, .. } => *amount += 1,
                    }
                }
                let sig = self.key.sign(notice.digest(channel));
                for p in parties {
                    env.send(
                        me,
                        NodeId::Party(p),
                        PMsg::Notify {
                            channel,
                            notice: notice.clone(),
                            sig,
                        },
                        "",
                    );
                }
            }
            Effect::CloseReady(mut state) => {
                if self.forges() {
                    state.balances.0 += 1;
                }
                let sig = self.key.sign(state.digest());
                let (a, b) = self.account.parties;
                for p in [a, b] {
                    env.send(
                        me,
                        NodeId::Party(p),
                        PMsg::ClosureSig {
                            state: state.clone(),
                            sig,
                        },
                        "",
                    );
                }
            }
            Effect::Log(s) => env.sched.note(me, s),
        }
    }
}

/// The party that signs a first-hop request.
pub fn payer_of(msg: &PaymentMsg) -> Option<u32> {
    match msg.source {
        Source::Origin(p, _) | Source::Party(p) => Some(p),
        Source::Committee(_) => None,
    }
}

fn order_note(msg: &OrderMsg<Entry>) -> String {
    format!("slot {}", msg.slot())
}
