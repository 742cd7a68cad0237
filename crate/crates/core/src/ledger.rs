//! Blockchain abstraction: eventual inclusion with no bound on delay.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::{max_faults, Canonical, CommitteeId, Digest, KeyRegistry, QuorumCertificate, Signature, SignerId};
use crate::simnet::Time;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChannelId(pub u32);

impl std::fmt::Display for ChannelId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "γ{}", self.0)
    }
}

/// On-chain record of a funded channel.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelRecord {
    pub id: ChannelId,
    pub parties: (u32, u32),
    pub deposits: (u64, u64),
    pub committee: CommitteeId,
    pub committee_size: usize,
}

impl ChannelRecord {
    pub fn capacity(&self) -> u64 {
        self.deposits.0 + self.deposits.1
    }

    pub fn faults(&self) -> usize {
        max_faults(self.committee_size)
    }
}

/// The state a closure pays out.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalState {
    pub channel: ChannelId,
    pub balances: (u64, u64),
    /// Digest of the off-chain state this closure settles.
    pub state_digest: Digest,
    /// Outcome of each conditional payment pending in that state: `true` if paid.
    #[serde(default)]
    pub resolved: Vec<(u64, bool)>,
}

impl FinalState {
    /// What parties and members sign to authorize the closure.
    pub fn digest(&self) -> Digest {
        let mut c = Canonical::new();
        c.tag("final-state")
            .u32(self.channel.0)
            .u64(self.balances.0)
            .u64(self.balances.1)
            .digest_field(&self.state_digest);
        c.u64(self.resolved.len() as u64);
        for &(id, paid) in &self.resolved {
            c.u64(id).u8(paid as u8);
        }
        c.finish()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Authorization {
    BothParties(Signature, Signature),
    PartyAndQuorum(Signature, QuorumCertificate),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LedgerTx {
    Funding {
        record: ChannelRecord,
        signatures: (Signature, Signature),
    },
    Closure {
        state: FinalState,
        auth: Authorization,
    },
}

impl LedgerTx {
    pub fn channel(&self) -> ChannelId {
        match self {
            LedgerTx::Funding { record, .. } => record.id,
            LedgerTx::Closure { state, .. } => state.channel,
        }
    }
}

pub fn funding_digest(r: &ChannelRecord) -> Digest {
    Canonical::new()
        .tag("funding")
        .u32(r.id.0)
        .u32(r.parties.0)
        .u32(r.parties.1)
        .u64(r.deposits.0)
        .u64(r.deposits.1)
        .u32(r.committee.0)
        .u64(r.committee_size as u64)
        .finish()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum LedgerError {
    #[error("channel {0} already exists")]
    DuplicateChannel(ChannelId),
    #[error("channel {0} needs a non-empty committee")]
    ZeroCommittee(ChannelId),
    #[error("channel {0} parties must differ")]
    SelfChannel(ChannelId),
    #[error("unknown channel {0}")]
    UnknownChannel(ChannelId),
    #[error("channel {0} already closed")]
    AlreadyClosed(ChannelId),
    #[error("invalid authorization: {0}")]
    InvalidAuthorization(String),
    #[error("final balances do not sum to the channel capacity")]
    Conservation,
}

/// Inclusion delay chooser. Delays are finite but not bounded by any
/// protocol constant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InclusionPolicy {
    Fixed { delay: Time },
    Uniform { max: Time },
}

impl Default for InclusionPolicy {
    fn default() -> Self {
        InclusionPolicy::Uniform { max: 20 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub ticket: u64,
    pub include_at: Time,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StableEntry {
    pub height: u64,
    pub time: Time,
    pub ticket: u64,
    pub tx: LedgerTx,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub time: Time,
    pub ticket: u64,
    pub channel: ChannelId,
    pub reason: LedgerError,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Inclusion {
    Stable(StableEntry),
    Rejected(Rejection),
}

pub struct AsyncChain {
    registry: KeyRegistry,
    policy: InclusionPolicy,
    rng: ChaCha8Rng,
    next_ticket: u64,
    pending: BTreeMap<(Time, u64), LedgerTx>,
    channels: BTreeMap<ChannelId, ChannelRecord>,
    closed: BTreeMap<ChannelId, FinalState>,
    stable: Vec<StableEntry>,
    rejected: Vec<Rejection>,
}

impl AsyncChain {
    pub fn new(registry: KeyRegistry, policy: InclusionPolicy, seed: u64) -> Self {
        Self {
            registry,
            policy,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x6c65_6467_6572),
            next_ticket: 0,
            pending: BTreeMap::new(),
            channels: BTreeMap::new(),
            closed: BTreeMap::new(),
            stable: Vec::new(),
            rejected: Vec::new(),
        }
    }

    fn check_record(&self, r: &ChannelRecord) -> Result<(), LedgerError> {
        if self.channels.contains_key(&r.id) {
            return Err(LedgerError::DuplicateChannel(r.id));
        }
        if r.committee_size == 0 {
            return Err(LedgerError::ZeroCommittee(r.id));
        }
        if r.parties.0 == r.parties.1 {
            return Err(LedgerError::SelfChannel(r.id));
        }
        Ok(())
    }

    /// Genesis funding: registers the channel and its committee immediately.
    pub fn open_channel(&mut self, record: ChannelRecord) -> Result<ChannelId, LedgerError> {
        self.check_record(&record)?;
        let d = funding_digest(&record);
        let sigs = (
            self.registry.keypair(SignerId::Party(record.parties.0)).sign(d),
            self.registry.keypair(SignerId::Party(record.parties.1)).sign(d),
        );
        let id = record.id;
        self.channels.insert(id, record.clone());
        let ticket = self.next_ticket;
        self.next_ticket += 1;
        self.stable.push(StableEntry {
            height: self.stable.len() as u64,
            time: 0,
            ticket,
            tx: LedgerTx::Funding {
                record,
                signatures: sigs,
            },
        });
        Ok(id)
    }

    pub fn channel(&self, id: ChannelId) -> Option<&ChannelRecord> {
        self.channels.get(&id)
    }

    pub fn channels(&self) -> impl Iterator<Item = &ChannelRecord> {
        self.channels.values()
    }

    pub fn closure(&self, id: ChannelId) -> Option<&FinalState> {
        self.closed.get(&id)
    }

    pub fn is_closed(&self, id: ChannelId) -> bool {
        self.closed.contains_key(&id)
    }

    pub fn submit(&mut self, tx: LedgerTx, now: Time) -> Receipt {
        let delay = match self.policy {
            InclusionPolicy::Fixed { delay } => delay.max(1),
            InclusionPolicy::Uniform { max } => self.rng.gen_range(1..=max.max(1)),
        };
        let ticket = self.next_ticket;
        self.next_ticket += 1;
        let include_at = now + delay;
        self.pending.insert((include_at, ticket), tx);
        Receipt { ticket, include_at }
    }

    pub fn has_pending(&self) -> bool {
        !self.pending.is_empty()
    }

    pub fn next_inclusion(&self) -> Option<Time> {
        self.pending.keys().next().map(|k| k.0)
    }

    /// Includes every pending tx due at or before `now`.
    pub fn process(&mut self, now: Time) -> Vec<Inclusion> {
        let due: Vec<(Time, u64)> = self.pending.range(..=(now, u64::MAX)).map(|(k, _)| *k).collect();
        let mut out = Vec::new();
        for key in due {
            let tx = self.pending.remove(&key).expect("due key present");
            let channel = tx.channel();
            match self.validate(&tx) {
                Ok(()) => {
                    match &tx {
                        LedgerTx::Funding { record, .. } => {
                            self.channels.insert(record.id, record.clone());
                        }
                        LedgerTx::Closure { state, .. } => {
                            self.closed.insert(state.channel, state.clone());
                        }
                    }
                    let e = StableEntry {
                        height: self.stable.len() as u64,
                        time: now,
                        ticket: key.1,
                        tx,
                    };
                    self.stable.push(e.clone());
                    out.push(Inclusion::Stable(e));
                }
                Err(reason) => {
                    let r = Rejection {
                        time: now,
                        ticket: key.1,
                        channel,
                        reason,
                    };
                    self.rejected.push(r.clone());
                    out.push(Inclusion::Rejected(r));
                }
            }
        }
        out
    }

    pub fn validate(&self, tx: &LedgerTx) -> Result<(), LedgerError> {
        match tx {
            LedgerTx::Funding { record, signatures } => {
                self.check_record(record)?;
                let d = funding_digest(record);
                let ok = self
                    .registry
                    .verify_for(&signatures.0, SignerId::Party(record.parties.0), d)
                    && self
                        .registry
                        .verify_for(&signatures.1, SignerId::Party(record.parties.1), d);
                if ok {
                    Ok(())
                } else {
                    Err(LedgerError::InvalidAuthorization("funding signatures".into()))
                }
            }
            LedgerTx::Closure { state, auth } => {
                let rec = self
                    .channels
                    .get(&state.channel)
                    .ok_or(LedgerError::UnknownChannel(state.channel))?;
                if self.closed.contains_key(&state.channel) {
                    return Err(LedgerError::AlreadyClosed(state.channel));
                }
                if state.balances.0.checked_add(state.balances.1) != Some(rec.capacity()) {
                    return Err(LedgerError::Conservation);
                }
                let d = state.digest();
                let (a, b) = (SignerId::Party(rec.parties.0), SignerId::Party(rec.parties.1));
                match auth {
                    Authorization::BothParties(s0, s1) => {
                        let ok = (self.registry.verify_for(s0, a, d) && self.registry.verify_for(s1, b, d))
                            || (self.registry.verify_for(s0, b, d) && self.registry.verify_for(s1, a, d));
                        if !ok {
                            return Err(LedgerError::InvalidAuthorization("party signatures".into()));
                        }
                    }
                    Authorization::PartyAndQuorum(s, qc) => {
                        if !(self.registry.verify_for(s, a, d) || self.registry.verify_for(s, b, d)) {
                            return Err(LedgerError::InvalidAuthorization("party signature".into()));
                        }
                        if qc.committee != rec.committee || qc.digest != d {
                            return Err(LedgerError::InvalidAuthorization("certificate scope".into()));
                        }
                        let assembled = QuorumCertificate::assemble(
                            rec.committee,
                            rec.committee_size,
                            rec.faults(),
                            qc.signatures.iter().copied(),
                            &self.registry,
                        );
                        if let Err(e) = assembled {
                            return Err(LedgerError::InvalidAuthorization(e.to_string()));
                        }
                    }
                }
                Ok(())
            }
        }
    }

    pub fn stable(&self) -> &[StableEntry] {
        &self.stable
    }

    pub fn rejected(&self) -> &[Rejection] {
        &self.rejected
    }

    /// Final on-chain balance of `party` over all of its channels: closed
    /// channels pay out their final state.
    pub fn settled_balance(&self, party: u32) -> u64 {
        self.closed
            .values()
            .filter_map(|s| {
                let r = &self.channels[&s.channel];
                if r.parties.0 == party {
                    Some(s.balances.0)
                } else if r.parties.1 == party {
                    Some(s.balances.1)
                } else {
                    None
                }
            })
            .sum()
    }

    pub fn stable_json(&self) -> String {
        serde_json::to_string_pretty(&self.stable).expect("ledger entries serialize")
    }
}
