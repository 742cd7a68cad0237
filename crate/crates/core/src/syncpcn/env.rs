//! Shared simulation context handed to every party and member handler.

use std::collections::BTreeMap;

use crate::crypto::{CommitteeId, KeyRegistry, LockFunction};
use crate::ledger::{AsyncChain, ChannelId, LedgerTx};
use crate::simnet::{FaultPlan, NodeId, Scheduler, Time};

use super::msg::Msg;
use super::plan::HopPolicy;

/// Public facts about a funded channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelInfo {
    pub id: ChannelId,
    pub parties: (u32, u32),
    pub deposits: (u64, u64),
    pub committee_size: usize,
    pub policy: HopPolicy,
}

impl ChannelInfo {
    pub fn faults(&self) -> usize {
        crate::crypto::max_faults(self.committee_size)
    }

    pub fn members(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.committee_size as u32).map(move |j| NodeId::Member(CommitteeId(self.id.0), j))
    }

    pub fn peer_of(&self, party: u32) -> u32 {
        if self.parties.0 == party {
            self.parties.1
        } else {
            self.parties.0
        }
    }
}

pub struct Env {
    pub sched: Scheduler<Msg>,
    pub chain: AsyncChain,
    pub registry: KeyRegistry,
    pub lock: LockFunction,
    pub delta: Time,
    pub channels: BTreeMap<ChannelId, ChannelInfo>,
    pub faults: FaultPlan,
    /// Payment id → full path. Used for trace step numbers and by colluding
    /// parties, never by honest protocol logic.
    pub paths: BTreeMap<u64, Vec<u32>>,
}

impl Env {
    pub fn now(&self) -> Time {
        self.sched.now()
    }

    pub fn send(&mut self, from: NodeId, to: NodeId, msg: Msg, annotation: impl Into<String>) {
        self.sched
            .send(from, to, msg, annotation)
            .expect("protocol nodes are registered before the run");
    }

    /// Submits `tx` and wakes the ledger node when it is due.
    pub fn submit(&mut self, tx: LedgerTx) {
        let now = self.now();
        let r = self.chain.submit(tx, now);
        self.sched.set_timer(NodeId::Ledger, r.include_at, r.ticket);
    }

    pub fn info(&self, id: ChannelId) -> &ChannelInfo {
        &self.channels[&id]
    }

    pub fn position(&self, payment_id: u64, party: u32) -> Option<usize> {
        self.paths.get(&payment_id)?.iter().position(|&p| p == party)
    }

    pub fn hops(&self, payment_id: u64) -> usize {
        self.paths.get(&payment_id).map_or(0, |p| p.len() - 1)
    }

    /// Channel between two parties, if any.
    pub fn channel_between(&self, a: u32, b: u32) -> Option<&ChannelInfo> {
        self.channels
            .values()
            .find(|c| c.parties == (a, b) || c.parties == (b, a))
    }
}
