//! A channel party: signs payment requests and follows its channels through
//! member notices.

use std::collections::{BTreeMap, BTreeSet};

use crate::crypto::{CommitteeId, Digest, KeyPair, QuorumCertificate, Signature, SignerId};
use crate::ledger::{Authorization, ChannelId, FinalState, LedgerTx};
use crate::simnet::{NodeId, PartyBehavior, Time};

use super::account::{Mode, PartyAccount};
use super::env::PEnv;
use super::msg::{close_digest, Kind, Notice, PMsg, PaymentMsg, Route, Source};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stage {
    Locked,
    Done,
}

/// Handle of a payment at its first committee.
pub type Handle = (u32, Source, u64);

pub struct Party {
    pub id: u32,
    pub behavior: Option<PartyBehavior>,
    key: KeyPair,
    accounts: BTreeMap<u32, PartyAccount>,
    /// Payments this party started, by first-hop handle.
    sent: BTreeMap<Handle, usize>,
    completed: BTreeMap<usize, Time>,
    votes: BTreeMap<(u32, Digest), BTreeSet<u32>>,
    stage: BTreeMap<Handle, Stage>,
    closing: BTreeSet<u32>,
    closure_sigs: BTreeMap<(u32, Digest), BTreeMap<u32, Signature>>,
    closure_sent: BTreeSet<u32>,
}

impl Party {
    pub fn new(env: &PEnv, id: u32, behavior: Option<PartyBehavior>) -> Self {
        let mut accounts = BTreeMap::new();
        for c in &env.committees {
            if c.parties.0 == id {
                accounts.insert(c.id, PartyAccount::new(c.deposits.0));
            } else if c.parties.1 == id {
                accounts.insert(c.id, PartyAccount::new(c.deposits.1));
            }
        }
        Self {
            id,
            behavior,
            key: env.registry.keypair(SignerId::Party(id)),
            accounts,
            sent: BTreeMap::new(),
            completed: BTreeMap::new(),
            votes: BTreeMap::new(),
            stage: BTreeMap::new(),
            closing: BTreeSet::new(),
            closure_sigs: BTreeMap::new(),
            closure_sent: BTreeSet::new(),
        }
    }

    pub fn is_honest(&self) -> bool {
        self.behavior.is_none()
    }

    fn silent(&self) -> bool {
        self.behavior == Some(PartyBehavior::Silent)
    }

    pub fn account(&self, committee: u32) -> Option<&PartyAccount> {
        self.accounts.get(&committee)
    }

    pub fn completed_at(&self, payment: usize) -> Option<Time> {
        self.completed.get(&payment).copied()
    }

    /// Locks `amount` on the first channel and asks its committee to run the
    /// payment. Returns the handle, or `None` if refused locally.
    pub fn start_payment(
        &mut self,
        env: &mut PEnv,
        index: usize,
        path: &[u32],
        amount: u64,
        route: Route,
    ) -> Option<Handle> {
        if self.silent() {
            return None;
        }
        let me = NodeId::Party(self.id);
        let c = env.topo.committee(path[0], path[1])?;
        let id = match self.accounts.get_mut(&c).map(|a| a.pay(amount)) {
            Some(Ok(id)) => id,
            Some(Err(e)) => {
                env.sched.note(me, format!("#{index} refused: {e}"));
                return None;
            }
            None => return None,
        };
        let source = match env.mode {
            Mode::Simplified => Source::Origin(self.id, path[1]),
            Mode::Full => Source::Party(self.id),
        };
        let msg = PaymentMsg {
            kind: Kind::Pay,
            source,
            id,
            amount,
            route,
        };
        let handle = (c, source, id);
        self.sent.insert(handle, index);
        env.requests += 1;
        let members: Vec<NodeId> = env.info(c).members().collect();
        for (j, to) in members.into_iter().enumerate() {
            let mut m = msg.clone();
            if self.behavior == Some(PartyBehavior::Equivocate) && j % 2 == 1 {
                m.amount += 1;
            }
            let sig = self.key.sign(m.digest());
            env.send(me, to, PMsg::Request { msg: m, sig }, format!("#{index} pay request"));
        }
        Some(handle)
    }

    pub fn request_close(&mut self, env: &mut PEnv, committee: u32) {
        if self.silent() || !self.accounts.contains_key(&committee) {
            return;
        }
        self.closing.insert(committee);
        let channel = ChannelId(committee);
        let sig = self.key.sign(close_digest(channel, self.id));
        let members: Vec<NodeId> = env.info(committee).members().collect();
        for to in members {
            env.send(NodeId::Party(self.id), to, PMsg::CloseRequest { channel, sig }, "");
        }
    }

    pub fn on_message(&mut self, env: &mut PEnv, from: NodeId, msg: PMsg) {
        if self.silent() {
            return;
        }
        let NodeId::Member(CommitteeId(c), j) = from else {
            return;
        };
        if !self.accounts.contains_key(&c) {
            return;
        }
        match msg {
            PMsg::Notify { channel, notice, sig } => {
                let d = notice.digest(channel);
                if channel.0 != c || !env.registry.verify_for(&sig, SignerId::Member(CommitteeId(c), j), d) {
                    return;
                }
                let votes = self.votes.entry((c, d)).or_default();
                votes.insert(j);
                if votes.len() == env.info(c).f() + 1 {
                    self.act(env, c, notice);
                }
            }
            PMsg::ClosureSig { state, sig } => self.on_closure_sig(env, c, j, state, sig),
            _ => {}
        }
    }

    fn act(&mut self, env: &mut PEnv, c: u32, notice: Notice) {
        let (source, id) = notice.key();
        let key = (c, source, id);
        let now = env.now();
        let full = env.mode == Mode::Full;
        let acct = self.accounts.get_mut(&c).expect("checked by caller");
        let stage = self.stage.get(&key).copied();
        match notice {
            Notice::Locked { payer, amount, .. } => {
                if payer == self.id && stage.is_none() && !self.sent.contains_key(&key) {
                    acct.my_avail = acct.my_avail.saturating_sub(amount);
                    self.stage.insert(key, Stage::Locked);
                }
            }
            Notice::Done {
                kind, payer, amount, ..
            } => {
                if stage == Some(Stage::Done) {
                    return;
                }
                self.stage.insert(key, Stage::Done);
                if let Some(&index) = self.sent.get(&key) {
                    match kind {
                        Kind::Success => {
                            acct.on_success(amount);
                            self.completed.insert(index, now);
                            env.sched.note(NodeId::Party(self.id), format!("#{index} complete"));
                        }
                        _ => acct.on_reject(amount),
                    }
                } else if payer == self.id {
                    match (kind, stage) {
                        (Kind::Success, Some(Stage::Locked)) => acct.on_success(amount),
                        (Kind::Success, _) => {
                            acct.my_avail = acct.my_avail.saturating_sub(amount);
                            acct.on_success(amount);
                        }
                        (_, Some(Stage::Locked)) => acct.on_reject(amount),
                        _ => {}
                    }
                } else if kind == Kind::Success && full {
                    acct.my_balance += amount;
                    acct.my_avail += amount;
                }
            }
        }
    }

    fn on_closure_sig(&mut self, env: &mut PEnv, c: u32, j: u32, state: FinalState, sig: Signature) {
        let d = state.digest();
        if !self.closing.contains(&c)
            || self.closure_sent.contains(&c)
            || state.channel.0 != c
            || !env.registry.verify_for(&sig, SignerId::Member(CommitteeId(c), j), d)
        {
            return;
        }
        let sigs = self.closure_sigs.entry((c, d)).or_default();
        sigs.insert(j, sig);
        let info = *env.info(c);
        if sigs.len() < 2 * info.f() + 1 {
            return;
        }
        let Ok(qc) =
            QuorumCertificate::assemble(CommitteeId(c), info.n, info.f(), sigs.values().copied(), &env.registry)
        else {
            return;
        };
        self.closure_sent.insert(c);
        let auth = Authorization::PartyAndQuorum(self.key.sign(d), qc);
        env.sched
            .note(NodeId::Party(self.id), format!("submit closure of {}", state.channel));
        env.submit(LedgerTx::Closure { state, auth });
    }
}
