//! Balances and payment bookkeeping held by parties and committees.
//!
//! The committee side is a deterministic state machine fed with totally
//! ordered entries, so all honest members of a committee hold equal copies.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::channel::CpState;
use crate::crypto::{peel_onion, Canonical, Digest, OnionKey};
use crate::ledger::{ChannelId, FinalState};

use super::msg::{Kind, Notice, PaymentMsg, Route, Source};

/// Simplified pseudocode or the full protocol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Mode {
    Simplified,
    Full,
}

/// Which committee runs each channel.
#[derive(Clone, Debug, Default)]
pub struct Topology {
    by_parties: BTreeMap<(u32, u32), u32>,
    parties: BTreeMap<u32, (u32, u32)>,
}

impl Topology {
    pub fn add(&mut self, committee: u32, a: u32, b: u32) {
        self.by_parties.insert((a.min(b), a.max(b)), committee);
        self.parties.insert(committee, (a, b));
    }

    pub fn committee(&self, a: u32, b: u32) -> Option<u32> {
        self.by_parties.get(&(a.min(b), a.max(b))).copied()
    }

    pub fn parties(&self, committee: u32) -> Option<(u32, u32)> {
        self.parties.get(&committee).copied()
    }

    /// The party two channels have in common.
    pub fn shared(&self, c: u32, d: u32) -> Option<u32> {
        let (a, b) = self.parties(c)?;
        let (x, y) = self.parties(d)?;
        [a, b].into_iter().find(|p| *p == x || *p == y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Upstream {
    Party(u32),
    Committee(u32),
}

/// One payment as seen by one committee.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Record {
    pub payer: u32,
    pub amount: u64,
    pub state: CpState,
    pub upstream: Upstream,
    /// Next committee and the handle the payment carries there.
    pub outgoing: Option<(u32, Source, u64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Effect {
    Send {
        committee: u32,
        msg: PaymentMsg,
    },
    Notify {
        parties: Vec<u32>,
        notice: Notice,
    },
    /// All pending payments resolved after a close request.
    CloseReady(FinalState),
    Log(String),
}

#[derive(Clone, Debug)]
pub struct CommitteeAccount {
    pub mode: Mode,
    pub committee: u32,
    pub channel: ChannelId,
    pub parties: (u32, u32),
    pub balance: (u64, u64),
    pub avail: (u64, u64),
    fee: u64,
    onion_key: OnionKey,
    next_id: BTreeMap<Source, u64>,
    deferred: BTreeMap<(Source, u64), PaymentMsg>,
    records: BTreeMap<(Source, u64), Record>,
    out_ids: BTreeMap<u32, u64>,
    closing: bool,
    close_sent: bool,
    executed: u64,
}

impl CommitteeAccount {
    pub fn new(
        mode: Mode,
        committee: u32,
        parties: (u32, u32),
        deposits: (u64, u64),
        fee: u64,
        onion_key: OnionKey,
    ) -> Self {
        Self {
            mode,
            committee,
            channel: ChannelId(committee),
            parties,
            balance: deposits,
            avail: deposits,
            fee,
            onion_key,
            next_id: BTreeMap::new(),
            deferred: BTreeMap::new(),
            records: BTreeMap::new(),
            out_ids: BTreeMap::new(),
            closing: false,
            close_sent: false,
            executed: 0,
        }
    }

    pub fn next_id(&self, source: Source) -> u64 {
        self.next_id.get(&source).copied().unwrap_or(0)
    }

    pub fn records(&self) -> &BTreeMap<(Source, u64), Record> {
        &self.records
    }

    pub fn record(&self, source: Source, id: u64) -> Option<&Record> {
        self.records.get(&(source, id))
    }

    pub fn executed(&self) -> u64 {
        self.executed
    }

    pub fn is_closing(&self) -> bool {
        self.closing
    }

    pub fn locked_total(&self) -> u64 {
        self.records
            .values()
            .filter(|r| r.state == CpState::Locked)
            .map(|r| r.amount)
            .sum()
    }

    fn side(&self, p: u32) -> Option<usize> {
        if p == self.parties.0 {
            Some(0)
        } else if p == self.parties.1 {
            Some(1)
        } else {
            None
        }
    }

    fn other(&self, p: u32) -> u32 {
        if p == self.parties.0 {
            self.parties.1
        } else {
            self.parties.0
        }
    }

    fn both(&self) -> Vec<u32> {
        vec![self.parties.0, self.parties.1]
    }

    /// Receipt-time filter for requests: stale Ids are dropped.
    pub fn admits(&self, msg: &PaymentMsg) -> bool {
        msg.kind != Kind::Pay || msg.id >= self.next_id(msg.source)
    }

    /// Applies one ordered payment message; `from` is the committee that
    /// vouched for it, if any.
    pub fn execute(&mut self, msg: &PaymentMsg, from: Option<u32>, topo: &Topology) -> Vec<Effect> {
        self.executed += 1;
        let mut out = Vec::new();
        match msg.kind {
            Kind::Pay => {
                let expected = self.next_id(msg.source);
                if msg.id < expected {
                    out.push(Effect::Log(format!("discard stale PAY {:?}/{}", msg.source, msg.id)));
                } else if msg.id > expected {
                    self.deferred.insert((msg.source, msg.id), msg.clone());
                    out.push(Effect::Log(format!(
                        "defer PAY {:?}/{} until {expected}",
                        msg.source, msg.id
                    )));
                } else {
                    self.execute_pay(msg, topo, &mut out);
                    let mut next = self.next_id(msg.source);
                    while let Some(m) = self.deferred.remove(&(msg.source, next)) {
                        self.execute_pay(&m, topo, &mut out);
                        next = self.next_id(msg.source);
                    }
                }
            }
            Kind::Success | Kind::Reject => self.execute_backward(msg, from, &mut out),
        }
        self.check_close(&mut out);
        out
    }

    pub fn execute_close(&mut self) -> Vec<Effect> {
        self.executed += 1;
        self.closing = true;
        let mut out = vec![Effect::Log("closing: no new payments".into())];
        self.check_close(&mut out);
        out
    }

    fn check_close(&mut self, out: &mut Vec<Effect>) {
        if self.closing && !self.close_sent && !self.records.values().any(|r| r.state == CpState::Locked) {
            self.close_sent = true;
            out.push(Effect::CloseReady(self.final_state()));
        }
    }

    pub fn state_digest(&self) -> Digest {
        Canonical::new()
            .tag("psync-account")
            .u32(self.committee)
            .u64(self.balance.0)
            .u64(self.balance.1)
            .u64(self.executed)
            .finish()
    }

    pub fn final_state(&self) -> FinalState {
        FinalState {
            channel: self.channel,
            balances: self.balance,
            state_digest: self.state_digest(),
            resolved: vec![],
        }
    }

    /// Where the payment came from, who pays on this channel, and where it
    /// goes next: `(upstream, payer, amount, next party, onion for next)`.
    fn route(&self, msg: &PaymentMsg, topo: &Topology) -> Result<(Upstream, u32, u64, Option<u32>, Route), String> {
        match (&msg.route, self.mode) {
            (Route::Path(path), Mode::Simplified) => {
                let (a, b) = self.parties;
                let i = path
                    .windows(2)
                    .position(|w| (w[0], w[1]) == (a, b) || (w[0], w[1]) == (b, a))
                    .ok_or("path does not use this channel")?;
                let upstream = if i == 0 {
                    Upstream::Party(path[0])
                } else {
                    Upstream::Committee(topo.committee(path[i - 1], path[i]).ok_or("no upstream channel")?)
                };
                Ok((
                    upstream,
                    path[i],
                    msg.amount,
                    path.get(i + 2).copied(),
                    msg.route.clone(),
                ))
            }
            (Route::Onion(packet), Mode::Full) => {
                let (upstream, payer) = match msg.source {
                    Source::Party(p) => (Upstream::Party(p), p),
                    Source::Committee(c) => (
                        Upstream::Committee(c),
                        topo.shared(c, self.committee).ok_or("not adjacent")?,
                    ),
                    Source::Origin(..) => return Err("simplified handle in full mode".into()),
                };
                let (payload, rest) = peel_onion(packet, &self.onion_key).map_err(|e| e.to_string())?;
                if matches!(upstream, Upstream::Committee(_)) && msg.amount < payload.amount + self.fee {
                    return Err(format!("fee: {} < {} + {}", msg.amount, payload.amount, self.fee));
                }
                Ok((
                    upstream,
                    payer,
                    payload.amount,
                    payload.next_party,
                    Route::Onion(Box::new(rest)),
                ))
            }
            _ => Err("route does not match mode".into()),
        }
    }

    fn execute_pay(&mut self, msg: &PaymentMsg, topo: &Topology, out: &mut Vec<Effect>) {
        *self.next_id.entry(msg.source).or_default() += 1;
        let key = (msg.source, msg.id);
        let routed = self.route(msg, topo).and_then(|r| {
            if self.side(r.1).is_none() {
                Err("payer not on this channel".into())
            } else {
                Ok(r)
            }
        });
        let (upstream, payer, amount, next, rest) = match routed {
            Ok(r) => r,
            Err(why) => {
                out.push(Effect::Log(format!("reject {:?}/{}: {why}", msg.source, msg.id)));
                // Without a usable route the sender can only be told if it is
                // our own party.
                if let Source::Party(p) | Source::Origin(p, _) = msg.source {
                    if self.side(p).is_some() {
                        self.reject_to(Upstream::Party(p), msg, out);
                    }
                }
                return;
            }
        };
        let payee = self.other(payer);
        let next_committee = next.map(|x| topo.committee(payee, x));
        let side = self.side(payer).expect("checked");
        let avail = if side == 0 { self.avail.0 } else { self.avail.1 };
        let ok = !self.closing && avail >= amount && next_committee != Some(None);
        let mut record = Record {
            payer,
            amount,
            state: CpState::Unlocked,
            upstream,
            outgoing: None,
        };
        if !ok {
            let why = if self.closing {
                "closing"
            } else if avail < amount {
                "insufficient balance"
            } else {
                "no next channel"
            };
            out.push(Effect::Log(format!("reject {:?}/{}: {why}", msg.source, msg.id)));
            self.records.insert(key, record);
            self.reject_to(upstream, msg, out);
            return;
        }
        *self.avail_mut(side) -= amount;
        match next_committee.flatten() {
            None => {
                // Last channel: settle here.
                *self.balance_mut(side) -= amount;
                if self.mode == Mode::Full {
                    *self.balance_mut(1 - side) += amount;
                    *self.avail_mut(1 - side) += amount;
                }
                record.state = CpState::Paid;
                self.records.insert(key, record);
                if let Upstream::Committee(c) = upstream {
                    out.push(Effect::Send {
                        committee: c,
                        msg: msg.reply(Kind::Success),
                    });
                }
                out.push(self.done(Kind::Success, msg, payer, amount));
            }
            Some(c) => {
                let (source, id) = match self.mode {
                    Mode::Simplified => (msg.source, msg.id),
                    Mode::Full => {
                        let n = self.out_ids.entry(c).or_default();
                        *n += 1;
                        (Source::Committee(self.committee), *n - 1)
                    }
                };
                record.state = CpState::Locked;
                record.outgoing = Some((c, source, id));
                self.records.insert(key, record);
                out.push(Effect::Send {
                    committee: c,
                    msg: PaymentMsg {
                        kind: Kind::Pay,
                        source,
                        id,
                        amount,
                        route: rest,
                    },
                });
                out.push(Effect::Notify {
                    parties: self.both(),
                    notice: Notice::Locked {
                        source: msg.source,
                        id: msg.id,
                        payer,
                        amount,
                    },
                });
            }
        }
    }

    fn reject_to(&self, upstream: Upstream, msg: &PaymentMsg, out: &mut Vec<Effect>) {
        match upstream {
            Upstream::Committee(c) => out.push(Effect::Send {
                committee: c,
                msg: msg.reply(Kind::Reject),
            }),
            Upstream::Party(p) => out.push(Effect::Notify {
                parties: vec![p],
                notice: Notice::Done {
                    kind: Kind::Reject,
                    source: msg.source,
                    id: msg.id,
                    payer: p,
                    amount: msg.amount,
                    balances: self.balance,
                },
            }),
        }
    }

    fn done(&self, kind: Kind, msg: &PaymentMsg, payer: u32, amount: u64) -> Effect {
        Effect::Notify {
            parties: self.both(),
            notice: Notice::Done {
                kind,
                source: msg.source,
                id: msg.id,
                payer,
                amount,
                balances: self.balance,
            },
        }
    }

    fn execute_backward(&mut self, msg: &PaymentMsg, from: Option<u32>, out: &mut Vec<Effect>) {
        let found = self
            .records
            .iter()
            .find(|(_, r)| {
                r.outgoing
                    .is_some_and(|(c, s, i)| Some(c) == from && (s, i) == (msg.source, msg.id))
            })
            .map(|(k, r)| (*k, r.clone()));
        let Some((key, rec)) = found else {
            out.push(Effect::Log(format!(
                "ignore {:?} for unknown {:?}/{}",
                msg.kind, msg.source, msg.id
            )));
            return;
        };
        if rec.state != CpState::Locked {
            out.push(Effect::Log(format!(
                "ignore {:?} for settled {:?}/{}",
                msg.kind, msg.source, msg.id
            )));
            return;
        }
        let side = self.side(rec.payer).expect("record payer is a channel party");
        let upstream_msg = PaymentMsg {
            kind: msg.kind,
            source: key.0,
            id: key.1,
            amount: rec.amount,
            route: match &msg.route {
                Route::Path(p) => Route::Path(p.clone()),
                _ => Route::Handle,
            },
        };
        let state = if msg.kind == Kind::Success {
            *self.balance_mut(side) -= rec.amount;
            if self.mode == Mode::Full {
                *self.balance_mut(1 - side) += rec.amount;
                *self.avail_mut(1 - side) += rec.amount;
            }
            CpState::Paid
        } else {
            *self.avail_mut(side) += rec.amount;
            CpState::Revoked
        };
        self.records.get_mut(&key).expect("found above").state = state;
        if let Upstream::Committee(c) = rec.upstream {
            out.push(Effect::Send {
                committee: c,
                msg: upstream_msg.clone(),
            });
        }
        out.push(self.done(msg.kind, &upstream_msg, rec.payer, rec.amount));
    }

    fn avail_mut(&mut self, side: usize) -> &mut u64 {
        if side == 0 {
            &mut self.avail.0
        } else {
            &mut self.avail.1
        }
    }

    fn balance_mut(&mut self, side: usize) -> &mut u64 {
        if side == 0 {
            &mut self.balance.0
        } else {
            &mut self.balance.1
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum PayError {
    #[error("available balance {avail} below {amount}")]
    Insufficient { avail: u64, amount: u64 },
    #[error("amount must be positive")]
    Zero,
}

/// A party's view of one of its channels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PartyAccount {
    pub my_balance: u64,
    pub my_avail: u64,
    pub next_id: u64,
}

impl PartyAccount {
    pub fn new(v: u64) -> Self {
        Self {
            my_balance: v,
            my_avail: v,
            next_id: 0,
        }
    }

    /// Locks `v` locally and returns the Id for the request.
    pub fn pay(&mut self, v: u64) -> Result<u64, PayError> {
        if v == 0 {
            return Err(PayError::Zero);
        }
        if self.my_avail < v {
            return Err(PayError::Insufficient {
                avail: self.my_avail,
                amount: v,
            });
        }
        self.my_avail -= v;
        self.next_id += 1;
        Ok(self.next_id - 1)
    }

    pub fn on_reject(&mut self, v: u64) {
        self.my_avail += v;
    }

    pub fn on_success(&mut self, v: u64) {
        self.my_balance -= v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(k: u32) -> Topology {
        let mut t = Topology::default();
        for i in 0..k {
            t.add(i, i, i + 1);
        }
        t
    }

    fn acct(c: u32, avail: u64) -> CommitteeAccount {
        CommitteeAccount::new(Mode::Simplified, c, (c, c + 1), (avail, 50), 0, [0; 32])
    }

    fn pay(id: u64, v: u64, path: Vec<u32>) -> PaymentMsg {
        PaymentMsg {
            kind: Kind::Pay,
            source: Source::Origin(path[0], path[1]),
            id,
            amount: v,
            route: Route::Path(path),
        }
    }

    fn sends(e: &[Effect]) -> Vec<(u32, Kind)> {
        e.iter()
            .filter_map(|x| match x {
                Effect::Send { committee, msg } => Some((*committee, msg.kind)),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn party_locks_locally() {
        let mut a = PartyAccount::new(10);
        assert_eq!(a.pay(4), Ok(0));
        assert_eq!((a.my_avail, a.my_balance), (6, 10));
        assert_eq!(a.pay(1), Ok(1));
        a.on_success(4);
        assert_eq!(a.my_balance, 6);
        assert!(matches!(a.pay(0), Err(PayError::Zero)));
        assert!(matches!(a.pay(100), Err(PayError::Insufficient { .. })));
    }

    #[test]
    fn ids_are_executed_in_order() {
        let t = line(1);
        let mut w = acct(0, 100);
        for id in 0..2 {
            w.execute(&pay(id, 1, vec![0, 1]), None, &t);
        }
        assert_eq!(w.next_id(Source::Origin(0, 1)), 2);
        assert!(!w.admits(&pay(1, 1, vec![0, 1])));
        assert!(w.admits(&pay(2, 1, vec![0, 1])));
        // Id 5 waits for 2, 3 and 4.
        let e = w.execute(&pay(5, 1, vec![0, 1]), None, &t);
        assert!(matches!(&e[0], Effect::Log(s) if s.contains("defer")));
        assert_eq!(w.next_id(Source::Origin(0, 1)), 2);
        for id in 2..5 {
            w.execute(&pay(id, 1, vec![0, 1]), None, &t);
        }
        assert_eq!(w.next_id(Source::Origin(0, 1)), 6);
        assert_eq!(w.balance.0, 94);
        let e = w.execute(&pay(1, 1, vec![0, 1]), None, &t);
        assert!(matches!(&e[0], Effect::Log(s) if s.contains("stale")));
    }

    #[test]
    fn single_hop_settles_at_once() {
        let mut w = acct(0, 10);
        let e = w.execute(&pay(0, 4, vec![0, 1]), None, &line(1));
        assert!(sends(&e).is_empty());
        assert!(e.iter().any(|x| matches!(x, Effect::Notify { parties, notice: Notice::Done { kind: Kind::Success, .. } } if parties == &vec![0, 1])));
        assert_eq!((w.balance.0, w.avail.0), (6, 6));
        // The simplified pseudocode tracks only the payer side.
        assert_eq!(w.balance.1, 50);
    }

    #[test]
    fn middle_committee_forwards_or_rejects() {
        let t = line(3);
        let mut w = acct(1, 10);
        let e = w.execute(&pay(0, 5, vec![0, 1, 2, 3]), None, &t);
        assert_eq!(sends(&e), vec![(2, Kind::Pay)]);
        assert_eq!(w.avail.0, 5);
        assert_eq!(w.balance.0, 10);

        let mut poor = acct(1, 3);
        let e = poor.execute(&pay(0, 5, vec![0, 1, 2, 3]), None, &t);
        assert_eq!(sends(&e), vec![(0, Kind::Reject)]);
        assert_eq!(poor.avail.0, 3);
        assert_eq!(poor.locked_total(), 0);
    }

    #[test]
    fn reject_restores_once() {
        let t = line(2);
        let mut w = acct(0, 10);
        let p = pay(0, 5, vec![0, 1, 2]);
        w.execute(&p, None, &t);
        assert_eq!(w.avail.0, 5);
        let e = w.execute(&p.reply(Kind::Reject), Some(w.committee + 1), &t);
        assert!(e.iter().any(|x| matches!(
            x,
            Effect::Notify {
                notice: Notice::Done { kind: Kind::Reject, .. },
                ..
            }
        )));
        assert_eq!(w.avail.0, 10);
        let e = w.execute(&p.reply(Kind::Reject), Some(w.committee + 1), &t);
        assert!(matches!(&e[0], Effect::Log(s) if s.contains("settled")));
        assert_eq!(w.avail.0, 10);
    }

    #[test]
    fn success_settles_once_and_cascades() {
        let t = line(3);
        let mut w = acct(1, 10);
        let p = pay(0, 5, vec![0, 1, 2, 3]);
        w.execute(&p, None, &t);
        let e = w.execute(&p.reply(Kind::Success), Some(w.committee + 1), &t);
        assert_eq!(sends(&e), vec![(0, Kind::Success)]);
        assert_eq!((w.balance.0, w.avail.0), (5, 5));
        w.execute(&p.reply(Kind::Success), Some(w.committee + 1), &t);
        assert_eq!(w.balance.0, 5);
        assert_eq!(w.record(Source::Origin(0, 1), 0).unwrap().state, CpState::Paid);
    }

    #[test]
    fn close_waits_for_pending() {
        let t = line(2);
        let mut w = acct(0, 10);
        assert!(matches!(w.execute_close().last(), Some(Effect::CloseReady(_))));

        let mut w = acct(0, 10);
        let p = pay(0, 5, vec![0, 1, 2]);
        w.execute(&p, None, &t);
        assert!(!w.execute_close().iter().any(|e| matches!(e, Effect::CloseReady(_))));
        // New payments are refused while closing.
        let e = w.execute(&pay(1, 1, vec![0, 1, 2]), None, &t);
        assert!(e.iter().any(|x| matches!(x, Effect::Log(s) if s.contains("closing"))));
        let e = w.execute(&p.reply(Kind::Success), Some(w.committee + 1), &t);
        let Some(Effect::CloseReady(fs)) = e.last() else {
            panic!("{e:?}")
        };
        assert_eq!(fs.balances, (5, 50));
    }
}
