//! Shared simulation context for PSyncPCN handlers.

use std::collections::BTreeSet;

use crate::broadcast::CostModel;
use crate::crypto::{max_faults, CommitteeId, Digest, KeyRegistry};
use crate::ledger::{AsyncChain, LedgerTx};
use crate::simnet::{NodeId, Scheduler, Time};

use super::account::{Mode, Topology};
use super::msg::PMsg;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CommitteeInfo {
    pub id: u32,
    pub parties: (u32, u32),
    pub deposits: (u64, u64),
    pub n: usize,
    pub fee: u64,
}

impl CommitteeInfo {
    pub fn f(&self) -> usize {
        max_faults(self.n)
    }

    pub fn members(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.n as u32).map(move |j| NodeId::Member(CommitteeId(self.id), j))
    }
}

pub struct PEnv {
    pub sched: Scheduler<PMsg>,
    pub chain: AsyncChain,
    pub registry: KeyRegistry,
    pub delta: Time,
    pub mode: Mode,
    pub model: CostModel,
    pub topo: Topology,
    pub committees: Vec<CommitteeInfo>,
    /// Logical sends: one per request or per committee-to-committee message,
    /// however many copies travel.
    pub logical: BTreeSet<(u32, Digest)>,
    pub requests: u64,
}

impl PEnv {
    pub fn now(&self) -> Time {
        self.sched.now()
    }

    pub fn send(&mut self, from: NodeId, to: NodeId, msg: PMsg, annotation: impl Into<String>) {
        self.sched
            .send(from, to, msg, annotation)
            .expect("protocol nodes are registered before the run");
    }

    pub fn submit(&mut self, tx: LedgerTx) {
        let now = self.now();
        let r = self.chain.submit(tx, now);
        self.sched.set_timer(NodeId::Ledger, r.include_at, r.ticket);
    }

    pub fn info(&self, committee: u32) -> &CommitteeInfo {
        &self.committees[committee as usize]
    }
}
