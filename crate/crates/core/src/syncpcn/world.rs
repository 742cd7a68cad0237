//! Builds a SyncPCN run from a scenario and drives it to quiescence.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{ChannelSnapshot, CpState, Side};
use crate::crypto::{CommitteeId, Digest, KeyRegistry, LockFunction, OnionKey};
use crate::ledger::{AsyncChain, ChannelId, ChannelRecord, FinalState, Inclusion, LedgerTx};
use crate::scenario::validate::lock_horizon;
use crate::scenario::{PaymentReport, RunReport, ScenarioConfig};
use crate::simnet::{Event, NodeId, Scheduler, SimError, Time};

use super::env::{ChannelInfo, Env};
use super::member::Member;
use super::party::{Invoice, Party};
use super::plan::{setup_payment, HopPolicy, PaymentPlan, SetupError};

const START: u64 = 1 << 63;

pub struct SyncWorld {
    env: Env,
    parties: BTreeMap<u32, Party>,
    members: BTreeMap<(u32, u32), Member>,
    plans: Vec<PaymentPlan>,
    starts: Vec<Time>,
    budget_exceeded: bool,
}

impl SyncWorld {
    /// Assumes a validated config.
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, SetupError> {
        let delta = cfg.delta;
        let registry = KeyRegistry::new(cfg.seed);
        let mut chain = AsyncChain::new(registry.clone(), cfg.ledger, cfg.seed.wrapping_add(1));
        let mut sched = Scheduler::new(cfg.network_model(), cfg.seed, cfg.time_limit * delta, cfg.event_budget);
        sched.add_node(NodeId::Ledger);
        let mut channels = BTreeMap::new();
        for (i, c) in cfg.channels.iter().enumerate() {
            let id = ChannelId(i as u32);
            let record = ChannelRecord {
                id,
                parties: (c.a, c.b),
                deposits: (c.deposit_a, c.deposit_b),
                committee: CommitteeId(i as u32),
                committee_size: c.committee_size,
            };
            chain.open_channel(record).expect("validated topology");
            channels.insert(
                id,
                ChannelInfo {
                    id,
                    parties: (c.a, c.b),
                    deposits: (c.deposit_a, c.deposit_b),
                    committee_size: c.committee_size,
                    policy: HopPolicy {
                        fee: c.fee,
                        timelock: c.timelock * delta,
                    },
                },
            );
        }
        let paths = cfg
            .payments
            .iter()
            .enumerate()
            .map(|(i, p)| (i as u64, p.path.clone()))
            .collect();
        let mut env = Env {
            sched,
            chain,
            registry,
            lock: LockFunction::simulation_default(),
            delta,
            channels,
            faults: cfg.faults.clone(),
            paths,
        };
        let mut ids = BTreeSet::new();
        for c in env.channels.values() {
            ids.insert(c.parties.0);
            ids.insert(c.parties.1);
        }
        let mut parties = BTreeMap::new();
        for &p in &ids {
            env.sched.add_node(NodeId::Party(p));
            parties.insert(p, Party::new(&env, p, cfg.faults.party(p)));
        }
        let mut members = BTreeMap::new();
        let infos: Vec<ChannelInfo> = env.channels.values().cloned().collect();
        for c in &infos {
            for j in 0..c.committee_size as u32 {
                env.sched.add_node(NodeId::Member(CommitteeId(c.id.0), j));
                let b = cfg.faults.member(c.id.0, j);
                members.insert((c.id.0, j), Member::new(&env, c.id, j, b));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_91a7);
        let mut plans = Vec::new();
        let mut starts = Vec::new();
        for (i, p) in cfg.payments.iter().enumerate() {
            let policies: Vec<HopPolicy> = p
                .path
                .windows(2)
                .map(|w| env.channel_between(w[0], w[1]).expect("validated path").policy)
                .collect();
            let k = p.path.len() - 1;
            let start = p.start * delta;
            let anchor = start + lock_horizon(k) * delta;
            let plan = setup_payment(
                &env.lock,
                &mut rng,
                i as u64,
                &p.path,
                p.value,
                &policies,
                p.final_timelock * delta,
                delta,
                anchor,
            )?;
            parties.get_mut(&p.receiver).expect("known party").add_invoice(
                i as u64,
                Invoice {
                    sender: p.sender,
                    value: p.value,
                    final_timelock: p.final_timelock * delta,
                },
            );
            env.sched.set_timer(NodeId::Party(p.sender), start, START | i as u64);
            plans.push(plan);
            starts.push(start);
        }
        Ok(Self {
            env,
            parties,
            members,
            plans,
            starts,
            budget_exceeded: false,
        })
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn party(&self, id: u32) -> Option<&Party> {
        self.parties.get(&id)
    }

    pub fn member(&self, channel: u32, index: u32) -> Option<&Member> {
        self.members.get(&(channel, index))
    }

    pub fn plans(&self) -> &[PaymentPlan] {
        &self.plans
    }

    /// Processes events until quiescence, the time limit or the budget.
    pub fn run(&mut self) {
        loop {
            let ev = match self.env.sched.next_event() {
                Ok(Some(ev)) => ev,
                Ok(None) => break,
                Err(SimError::BudgetExceeded(_)) => {
                    self.budget_exceeded = true;
                    break;
                }
                Err(e) => panic!("scheduler invariant: {e}"),
            };
            self.dispatch(ev);
        }
    }

    fn dispatch(&mut self, ev: Event<super::msg::Msg>) {
        match ev {
            Event::Message(m) => match m.to {
                NodeId::Party(p) => {
                    if let Some(party) = self.parties.get_mut(&p) {
                        party.on_message(&mut self.env, m.from, m.message);
                    }
                }
                NodeId::Member(c, j) => {
                    if let Some(member) = self.members.get_mut(&(c.0, j)) {
                        member.on_message(&mut self.env, m.from, m.message);
                    }
                }
                NodeId::Ledger => {}
            },
            Event::Timer { node, tag, .. } => match node {
                NodeId::Party(p) if tag & START != 0 => self.start(p, (tag & !START) as usize),
                NodeId::Party(p) => {
                    if let Some(party) = self.parties.get_mut(&p) {
                        party.on_timer(&mut self.env, tag);
                    }
                }
                NodeId::Member(c, j) => {
                    if let Some(member) = self.members.get_mut(&(c.0, j)) {
                        member.on_timer(&mut self.env, tag);
                    }
                }
                NodeId::Ledger => self.include(),
            },
        }
    }

    fn start(&mut self, sender: u32, i: usize) {
        let plan = self.plans[i].clone();
        let keys: Vec<OnionKey> = plan.path[1..].iter().map(|&p| self.env.registry.onion_key(p)).collect();
        let onion = plan.onion(&keys).expect("validated path length");
        let party = self.parties.get_mut(&sender).expect("known party");
        if party.behavior == Some(crate::simnet::PartyBehavior::Silent) {
            return;
        }
        party.start_payment(&mut self.env, plan, onion);
    }

    fn include(&mut self) {
        let now = self.env.now();
        for inc in self.env.chain.process(now) {
            match inc {
                Inclusion::Stable(e) => {
                    let d = Some(tx_digest(&e.tx));
                    self.env
                        .sched
                        .note_ledger(format!("stable {} {}", tx_kind(&e.tx), e.tx.channel()), d);
                    if let LedgerTx::Closure { state, .. } = &e.tx {
                        let r = &self.env.channels[&state.channel];
                        for p in [r.parties.0, r.parties.1] {
                            if let Some(party) = self.parties.get_mut(&p) {
                                party.on_closed(&mut self.env, state);
                            }
                        }
                    }
                }
                Inclusion::Rejected(r) => {
                    self.env
                        .sched
                        .note_ledger(format!("rejected {}: {}", r.channel, r.reason), None);
                }
            }
        }
    }

    /// Every snapshot any party signed, by digest.
    fn snapshot_book(&self) -> BTreeMap<Digest, ChannelSnapshot> {
        let mut book = BTreeMap::new();
        for p in self.parties.values() {
            for (d, s) in p.book() {
                book.insert(*d, s.clone());
            }
        }
        book
    }

    /// Registered history of a channel as seen by its honest members: the
    /// longest one wins.
    fn history(&self, channel: ChannelId, book: &BTreeMap<Digest, ChannelSnapshot>) -> Vec<ChannelSnapshot> {
        let info = &self.env.channels[&channel];
        let mut best: Vec<ChannelSnapshot> = Vec::new();
        for j in 0..info.committee_size as u32 {
            let m = &self.members[&(channel.0, j)];
            if !m.is_honest() {
                continue;
            }
            let h: Vec<ChannelSnapshot> = m
                .store()
                .history()
                .iter()
                .filter_map(|r| book.get(&r.digest).cloned())
                .collect();
            if h.len() > best.len() {
                best = h;
            }
        }
        best
    }

    /// Final state of every CP a channel ever held, plus the channel's final
    /// balances with locked coins counted for their payer.
    fn channel_outcome(
        &self,
        channel: ChannelId,
        book: &BTreeMap<Digest, ChannelSnapshot>,
    ) -> (BTreeMap<u64, CpState>, (u64, u64)) {
        let info = &self.env.channels[&channel];
        let closure: Option<&FinalState> = self.env.chain.closure(channel);
        let mut prev = ChannelSnapshot::initial(channel, info.deposits);
        let mut states = BTreeMap::new();
        let stop = closure.and_then(|c| book.get(&c.state_digest)).map(|s| s.version);
        for next in self.history(channel, book) {
            if stop.is_some_and(|v| next.version > v) {
                break;
            }
            for cp in &next.pending {
                states.entry(cp.payment_id).or_insert(CpState::Locked);
            }
            for cp in &prev.pending {
                if next.find(cp.payment_id).is_none() {
                    let payee = cp.payer.other();
                    let paid = next.balance(payee) >= prev.balance(payee) + cp.amount;
                    states.insert(cp.payment_id, if paid { CpState::Paid } else { CpState::Revoked });
                }
            }
            prev = next;
        }
        match closure {
            Some(c) => {
                for &(id, paid) in &c.resolved {
                    states.insert(id, if paid { CpState::Paid } else { CpState::Revoked });
                }
                (states, c.balances)
            }
            None => {
                let mut b = prev.balances;
                for cp in &prev.pending {
                    match cp.payer {
                        Side::A => b.0 += cp.amount,
                        Side::B => b.1 += cp.amount,
                    }
                }
                (states, b)
            }
        }
    }

    pub fn report(&self, cfg: &ScenarioConfig) -> RunReport {
        let book = self.snapshot_book();
        let mut outcomes = BTreeMap::new();
        let mut holdings: BTreeMap<u32, (u64, u64)> = self.parties.keys().map(|&p| (p, (0, 0))).collect();
        for (id, info) in &self.env.channels {
            let (states, bal) = self.channel_outcome(*id, &book);
            outcomes.insert(*id, states);
            let (a, b) = info.parties;
            holdings.get_mut(&a).expect("party").0 += info.deposits.0;
            holdings.get_mut(&b).expect("party").0 += info.deposits.1;
            holdings.get_mut(&a).expect("party").1 += bal.0;
            holdings.get_mut(&b).expect("party").1 += bal.1;
        }
        let payments = self
            .plans
            .iter()
            .enumerate()
            .map(|(i, plan)| {
                let channels: Vec<ChannelId> = plan
                    .path
                    .windows(2)
                    .map(|w| self.env.channel_between(w[0], w[1]).expect("validated").id)
                    .collect();
                let hop_states = channels
                    .iter()
                    .map(|c| outcomes[c].get(&(i as u64)).copied().unwrap_or(CpState::Unlocked))
                    .collect();
                PaymentReport {
                    id: i as u64,
                    path: plan.path.clone(),
                    channels,
                    amounts: plan.amounts.clone(),
                    hop_states,
                    started_at: self.starts[i],
                    completed_at: self.parties[&plan.path[0]].completed_at(i as u64),
                }
            })
            .collect();
        let counts: BTreeMap<String, u64> = self
            .env
            .sched
            .message_counts()
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect();
        let total = self.env.sched.total_messages();
        let accounted = total - counts.get("claim-accept").copied().unwrap_or(0);
        RunReport {
            protocol: cfg.protocol,
            cost_model: cfg.cost_model,
            delta: cfg.delta,
            committee_sizes: self.env.channels.values().map(|c| c.committee_size).collect(),
            message_counts: counts,
            messages_total: total,
            messages_accounted: accounted,
            payments,
            honest_parties: self.parties.values().filter(|p| p.is_honest()).map(|p| p.id).collect(),
            holdings,
            quiescent: self.env.sched.pending() == 0,
            budget_exceeded: self.budget_exceeded,
            end_time: self.env.now(),
            closed_channels: self
                .env
                .channels
                .keys()
                .filter(|c| self.env.chain.is_closed(**c))
                .copied()
                .collect(),
            trace: self.env.sched.trace().clone(),
            ledger_json: self.env.chain.stable_json(),
        }
    }
}

fn tx_digest(tx: &LedgerTx) -> Digest {
    match tx {
        LedgerTx::Funding { record, .. } => crate::ledger::funding_digest(record),
        LedgerTx::Closure { state, .. } => state.digest(),
    }
}

fn tx_kind(tx: &LedgerTx) -> &'static str {
    match tx {
        LedgerTx::Funding { .. } => "funding",
        LedgerTx::Closure { .. } => "closure",
    }
}

/// Runs a validated SyncPCN scenario.
pub fn run(cfg: &ScenarioConfig) -> Result<RunReport, SetupError> {
    let mut w = SyncWorld::new(cfg)?;
    w.run();
    Ok(w.report(cfg))
}
