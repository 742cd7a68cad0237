//! Builds a PSyncPCN run from a scenario and drives it to quiescence.

use std::collections::{BTreeMap, BTreeSet};

use crate::channel::CpState;
use crate::crypto::{build_onion, CommitteeId, HopPayload, KeyRegistry, OnionKey};
use crate::ledger::{AsyncChain, ChannelId, ChannelRecord, Inclusion, LedgerTx};
use crate::scenario::{PaymentReport, Protocol, RunReport, ScenarioConfig};
use crate::simnet::{Event, NodeId, Scheduler, SimError, Time};
use crate::syncpcn::{hop_amounts, HopPolicy};

use super::account::{Mode, Topology};
use super::env::{CommitteeInfo, PEnv};
use super::member::Member;
use super::msg::{PMsg, Route};
use super::party::{Handle, Party};

const START: u64 = 1 << 63;
const CLOSE: u64 = 1 << 62;

pub struct PsyncWorld {
    env: PEnv,
    parties: BTreeMap<u32, Party>,
    members: BTreeMap<(u32, u32), Member>,
    paths: Vec<Vec<u32>>,
    amounts: Vec<Vec<u64>>,
    starts: Vec<Time>,
    handles: Vec<Option<Handle>>,
    closures: Vec<(u32, u32)>,
    budget_exceeded: bool,
}

impl PsyncWorld {
    /// Assumes a validated config.
    pub fn new(cfg: &ScenarioConfig) -> Self {
        let delta = cfg.delta;
        let mode = match cfg.protocol {
            Protocol::PsyncpcnFull => Mode::Full,
            _ => Mode::Simplified,
        };
        let registry = KeyRegistry::new(cfg.seed);
        let mut chain = AsyncChain::new(registry.clone(), cfg.ledger, cfg.seed.wrapping_add(1));
        let mut sched = Scheduler::new(cfg.network_model(), cfg.seed, cfg.time_limit * delta, cfg.event_budget);
        sched.add_node(NodeId::Ledger);
        let mut topo = Topology::default();
        let mut committees = Vec::new();
        for (i, c) in cfg.channels.iter().enumerate() {
            let id = i as u32;
            chain
                .open_channel(ChannelRecord {
                    id: ChannelId(id),
                    parties: (c.a, c.b),
                    deposits: (c.deposit_a, c.deposit_b),
                    committee: CommitteeId(id),
                    committee_size: c.committee_size,
                })
                .expect("validated topology");
            topo.add(id, c.a, c.b);
            committees.push(CommitteeInfo {
                id,
                parties: (c.a, c.b),
                deposits: (c.deposit_a, c.deposit_b),
                n: c.committee_size,
                fee: c.fee,
            });
        }
        let mut env = PEnv {
            sched,
            chain,
            registry,
            delta,
            mode,
            model: cfg.cost_model,
            topo,
            committees,
            logical: BTreeSet::new(),
            requests: 0,
        };
        let ids: BTreeSet<u32> = cfg.channels.iter().flat_map(|c| [c.a, c.b]).collect();
        let mut parties = BTreeMap::new();
        for &p in &ids {
            env.sched.add_node(NodeId::Party(p));
            parties.insert(p, Party::new(&env, p, cfg.faults.party(p)));
        }
        let mut members = BTreeMap::new();
        for c in env.committees.clone() {
            for j in 0..c.n as u32 {
                env.sched.add_node(NodeId::Member(CommitteeId(c.id), j));
                members.insert((c.id, j), Member::new(&env, c.id, j, cfg.faults.member(c.id, j)));
            }
        }
        let mut paths = Vec::new();
        let mut amounts = Vec::new();
        let mut starts = Vec::new();
        for (i, p) in cfg.payments.iter().enumerate() {
            let k = p.path.len() - 1;
            let v = match mode {
                Mode::Simplified => vec![p.value; k],
                Mode::Full => {
                    let policies: Vec<HopPolicy> = p
                        .path
                        .windows(2)
                        .map(|w| HopPolicy {
                            fee: env.info(env.topo.committee(w[0], w[1]).expect("validated path")).fee,
                            timelock: 0,
                        })
                        .collect();
                    hop_amounts(p.value, &policies)
                }
            };
            env.sched
                .set_timer(NodeId::Party(p.sender), p.start * delta, START | i as u64);
            paths.push(p.path.clone());
            amounts.push(v);
            starts.push(p.start * delta);
        }
        let mut closures = Vec::new();
        for (i, c) in cfg.closures.iter().enumerate() {
            let committee = env.topo.committee(c.party, c.peer).expect("validated closure");
            env.sched
                .set_timer(NodeId::Party(c.party), c.at * delta, CLOSE | i as u64);
            closures.push((c.party, committee));
        }
        let handles = vec![None; paths.len()];
        Self {
            env,
            parties,
            members,
            paths,
            amounts,
            starts,
            handles,
            closures,
            budget_exceeded: false,
        }
    }

    pub fn env(&self) -> &PEnv {
        &self.env
    }

    pub fn party(&self, id: u32) -> Option<&Party> {
        self.parties.get(&id)
    }

    pub fn member(&self, committee: u32, index: u32) -> Option<&Member> {
        self.members.get(&(committee, index))
    }

    pub fn members(&self) -> impl Iterator<Item = &Member> {
        self.members.values()
    }

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

    fn dispatch(&mut self, ev: Event<PMsg>) {
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
                NodeId::Party(_) if tag & START != 0 => self.start((tag & !START) as usize),
                NodeId::Party(p) if tag & CLOSE != 0 => {
                    let (_, committee) = self.closures[(tag & !CLOSE) as usize];
                    if let Some(party) = self.parties.get_mut(&p) {
                        party.request_close(&mut self.env, committee);
                    }
                }
                NodeId::Party(_) => {}
                NodeId::Member(c, j) => {
                    if let Some(member) = self.members.get_mut(&(c.0, j)) {
                        member.on_timer(&mut self.env, tag);
                    }
                }
                NodeId::Ledger => self.include(),
            },
        }
    }

    /// Committee sequence of a path.
    fn committees_of(&self, path: &[u32]) -> Vec<u32> {
        path.windows(2)
            .map(|w| self.env.topo.committee(w[0], w[1]).expect("validated path"))
            .collect()
    }

    fn start(&mut self, i: usize) {
        let path = self.paths[i].clone();
        let amounts = &self.amounts[i];
        let route = match self.env.mode {
            Mode::Simplified => Route::Path(path.clone()),
            Mode::Full => {
                let committees = self.committees_of(&path);
                let payloads: Vec<HopPayload> = (0..committees.len())
                    .map(|j| HopPayload {
                        next_party: path.get(j + 2).copied(),
                        amount: amounts[j],
                        lock: None,
                        timelock: 0,
                        payment_id: 0,
                    })
                    .collect();
                let keys: Vec<OnionKey> = committees
                    .iter()
                    .map(|&c| self.env.registry.committee_onion_key(CommitteeId(c)))
                    .collect();
                let hops: Vec<u32> = std::iter::once(path[0]).chain(committees).collect();
                Route::Onion(Box::new(
                    build_onion(&hops, &payloads, &keys).expect("validated path length"),
                ))
            }
        };
        let amount = amounts[0];
        let party = self.parties.get_mut(&path[0]).expect("known party");
        self.handles[i] = party.start_payment(&mut self.env, i, &path, amount, route);
    }

    fn include(&mut self) {
        let now = self.env.now();
        for inc in self.env.chain.process(now) {
            match inc {
                Inclusion::Stable(e) => {
                    if let LedgerTx::Closure { state, .. } = &e.tx {
                        let d = Some(state.digest());
                        self.env
                            .sched
                            .note_ledger(format!("stable closure {}", state.channel), d);
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

    /// The honest member of `committee` that has executed the most entries.
    fn reference(&self, committee: u32) -> Option<&Member> {
        let n = self.env.info(committee).n as u32;
        (0..n)
            .filter_map(|j| self.members.get(&(committee, j)))
            .filter(|m| m.is_honest())
            .max_by_key(|m| (m.account().executed(), std::cmp::Reverse(m.index)))
    }

    fn hop_states(&self, i: usize) -> Vec<CpState> {
        let k = self.paths[i].len() - 1;
        let mut states = vec![CpState::Unlocked; k];
        let Some((mut c, mut source, mut id)) = self.handles[i] else {
            return states;
        };
        for s in states.iter_mut() {
            let Some(rec) = self.reference(c).and_then(|m| m.account().record(source, id)) else {
                break;
            };
            *s = rec.state;
            match rec.outgoing {
                Some((nc, ns, ni)) => (c, source, id) = (nc, ns, ni),
                None => break,
            }
        }
        states
    }

    pub fn report(&self, cfg: &ScenarioConfig) -> RunReport {
        let mut holdings: BTreeMap<u32, (u64, u64)> = self.parties.keys().map(|&p| (p, (0, 0))).collect();
        for c in &self.env.committees {
            let bal = match self.env.chain.closure(ChannelId(c.id)) {
                Some(st) => st.balances,
                None => self.reference(c.id).map_or(c.deposits, |m| m.account().balance),
            };
            let (a, b) = c.parties;
            holdings.get_mut(&a).expect("party").0 += c.deposits.0;
            holdings.get_mut(&b).expect("party").0 += c.deposits.1;
            holdings.get_mut(&a).expect("party").1 += bal.0;
            holdings.get_mut(&b).expect("party").1 += bal.1;
        }
        let payments = (0..self.paths.len())
            .map(|i| PaymentReport {
                id: i as u64,
                path: self.paths[i].clone(),
                channels: self.committees_of(&self.paths[i]).into_iter().map(ChannelId).collect(),
                amounts: self.amounts[i].clone(),
                hop_states: self.hop_states(i),
                started_at: self.starts[i],
                completed_at: self.parties[&self.paths[i][0]].completed_at(i),
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
        let physical: u64 = ["pay-request", "committee-pay", "committee-success", "committee-reject"]
            .iter()
            .filter_map(|l| counts.get(*l))
            .sum();
        let accounted = total - physical + self.env.requests + self.env.logical.len() as u64;
        RunReport {
            protocol: cfg.protocol,
            cost_model: cfg.cost_model,
            delta: cfg.delta,
            committee_sizes: self.env.committees.iter().map(|c| c.n).collect(),
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
                .committees
                .iter()
                .map(|c| ChannelId(c.id))
                .filter(|c| self.env.chain.is_closed(*c))
                .collect(),
            trace: self.env.sched.trace().clone(),
            ledger_json: self.env.chain.stable_json(),
        }
    }
}

/// Runs a validated PSyncPCN scenario.
pub fn run(cfg: &ScenarioConfig) -> RunReport {
    let mut w = PsyncWorld::new(cfg);
    w.run();
    w.report(cfg)
}
