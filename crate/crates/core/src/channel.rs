//! Channel state shared by both protocols: balances, conditional payments and
//! the committee's registration records.

use serde::{Deserialize, Serialize};

use crate::crypto::{Canonical, Digest, KeyPair, KeyRegistry, LockCondition, Signature, SignerId};
use crate::ledger::ChannelId;
use crate::simnet::Time;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Side::A => 0,
            Side::B => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CpState {
    Unlocked,
    Locked,
    Paid,
    Revoked,
}

impl CpState {
    /// Legal edges: unlocked→locked, locked→paid, locked→revoked.
    pub fn can_move_to(self, next: CpState) -> bool {
        matches!(
            (self, next),
            (CpState::Unlocked, CpState::Locked)
                | (CpState::Locked, CpState::Paid)
                | (CpState::Locked, CpState::Revoked)
        )
    }
}

/// `(v, T, Y)` owed by `payer` to the other side once the condition is opened.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionalPayment {
    pub payment_id: u64,
    pub payer: Side,
    pub amount: u64,
    /// Absolute simulated time.
    pub timelock: Time,
    pub condition: LockCondition,
    pub state: CpState,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum ChannelError {
    #[error("insufficient balance: have {have}, need {need}")]
    InsufficientBalance { have: u64, need: u64 },
    #[error("conditional payment amount must be positive")]
    ZeroAmount,
    #[error("timelock {timelock} within {min_gap} of pending timelock {other}")]
    TimelockSpacing { timelock: Time, other: Time, min_gap: Time },
    #[error("payment {0} already pending on this channel")]
    DuplicatePayment(u64),
    #[error("payment {0} not pending on this channel")]
    UnknownPayment(u64),
    #[error("illegal transition {from:?} -> {to:?}")]
    IllegalTransition { from: CpState, to: CpState },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSnapshot {
    pub channel: ChannelId,
    pub version: u64,
    pub balances: (u64, u64),
    /// Locked conditional payments, ordered by payment id.
    pub pending: Vec<ConditionalPayment>,
    pub salt: u64,
}

impl ChannelSnapshot {
    pub fn initial(channel: ChannelId, balances: (u64, u64)) -> Self {
        Self {
            channel,
            version: 0,
            balances,
            pending: Vec::new(),
            salt: 0,
        }
    }

    pub fn balance(&self, side: Side) -> u64 {
        match side {
            Side::A => self.balances.0,
            Side::B => self.balances.1,
        }
    }

    fn balance_mut(&mut self, side: Side) -> &mut u64 {
        match side {
            Side::A => &mut self.balances.0,
            Side::B => &mut self.balances.1,
        }
    }

    pub fn locked_total(&self) -> u64 {
        self.pending.iter().map(|c| c.amount).sum()
    }

    pub fn capacity(&self) -> u64 {
        self.balances.0 + self.balances.1 + self.locked_total()
    }

    pub fn find(&self, payment_id: u64) -> Option<&ConditionalPayment> {
        self.pending.iter().find(|c| c.payment_id == payment_id)
    }

    /// Canonical encoding, fixed field order, big-endian integers.
    pub fn encode(&self, c: &mut Canonical) {
        c.tag("snapshot")
            .u32(self.channel.0)
            .u64(self.version)
            .u64(self.balances.0)
            .u64(self.balances.1)
            .u32(self.pending.len() as u32);
        for cp in &self.pending {
            c.u64(cp.payment_id)
                .u8(cp.payer.index() as u8)
                .u64(cp.amount)
                .u64(cp.timelock)
                .u64(cp.condition.0);
        }
    }

    /// `H(snapshot || salt)`: the only thing committee members ever see.
    pub fn digest(&self) -> Digest {
        let mut c = Canonical::new();
        self.encode(&mut c);
        c.u64(self.salt);
        c.finish()
    }

    /// Next version with `cp` locked, taking `cp.amount` from the payer.
    /// Pending timelocks must be at least `min_gap` apart.
    pub fn with_locked(&self, mut cp: ConditionalPayment, min_gap: Time, salt: u64) -> Result<Self, ChannelError> {
        if cp.amount == 0 {
            return Err(ChannelError::ZeroAmount);
        }
        if self.find(cp.payment_id).is_some() {
            return Err(ChannelError::DuplicatePayment(cp.payment_id));
        }
        if !cp.state.can_move_to(CpState::Locked) {
            return Err(ChannelError::IllegalTransition {
                from: cp.state,
                to: CpState::Locked,
            });
        }
        let have = self.balance(cp.payer);
        if have < cp.amount {
            return Err(ChannelError::InsufficientBalance { have, need: cp.amount });
        }
        if let Some(other) = self.pending.iter().find(|o| o.timelock.abs_diff(cp.timelock) < min_gap) {
            return Err(ChannelError::TimelockSpacing {
                timelock: cp.timelock,
                other: other.timelock,
                min_gap,
            });
        }
        let mut next = self.clone();
        *next.balance_mut(cp.payer) -= cp.amount;
        cp.state = CpState::Locked;
        next.pending.push(cp);
        next.pending.sort_by_key(|c| c.payment_id);
        next.version += 1;
        next.salt = salt;
        Ok(next)
    }

    /// Next version with the pending CP resolved to `Paid` or `Revoked`.
    pub fn with_resolved(&self, payment_id: u64, to: CpState, salt: u64) -> Result<Self, ChannelError> {
        let cp = *self.find(payment_id).ok_or(ChannelError::UnknownPayment(payment_id))?;
        if !cp.state.can_move_to(to) {
            return Err(ChannelError::IllegalTransition { from: cp.state, to });
        }
        let mut next = self.clone();
        next.pending.retain(|c| c.payment_id != payment_id);
        let receiver = if to == CpState::Paid {
            cp.payer.other()
        } else {
            cp.payer
        };
        *next.balance_mut(receiver) += cp.amount;
        next.version += 1;
        next.salt = salt;
        Ok(next)
    }

    /// Balances after resolving every pending CP per `paid(payment_id)`.
    pub fn settle_all(&self, paid: impl Fn(u64) -> bool) -> (u64, u64) {
        let mut b = self.balances;
        for cp in &self.pending {
            let receiver = if paid(cp.payment_id) {
                cp.payer.other()
            } else {
                cp.payer
            };
            match receiver {
                Side::A => b.0 += cp.amount,
                Side::B => b.1 += cp.amount,
            }
        }
        b
    }
}

/// What the parties sign and the committee acknowledges for one version.
pub fn registration_digest(channel: ChannelId, version: u64, state_digest: Digest) -> Digest {
    Canonical::new()
        .tag("register")
        .u32(channel.0)
        .u64(version)
        .digest_field(&state_digest)
        .finish()
}

/// A committee member's record of one registered version.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistrationRecord {
    pub version: u64,
    pub digest: Digest,
    pub signatures: (Signature, Signature),
    pub received_at: Time,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum RegisterError {
    #[error("party signature does not verify")]
    BadSignature,
    #[error("version {version} is not newer than {latest}")]
    Stale { version: u64, latest: u64 },
    #[error("conflicting digest already registered for version {0}")]
    Conflict(u64),
}

/// Registration history a member keeps for one channel.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberStore {
    pub channel: ChannelId,
    pub parties: (u32, u32),
    history: Vec<RegistrationRecord>,
}

impl MemberStore {
    pub fn new(channel: ChannelId, parties: (u32, u32)) -> Self {
        Self {
            channel,
            parties,
            history: Vec::new(),
        }
    }

    pub fn latest(&self) -> Option<&RegistrationRecord> {
        self.history.last()
    }

    pub fn history(&self) -> &[RegistrationRecord] {
        &self.history
    }

    pub fn record_for(&self, digest: Digest) -> Option<&RegistrationRecord> {
        self.history.iter().find(|r| r.digest == digest)
    }

    /// Stores the registration and returns the member's acknowledgment.
    /// Re-delivery of the same version and digest is acknowledged again
    /// without a second record.
    pub fn register(
        &mut self,
        member: &KeyPair,
        version: u64,
        digest: Digest,
        signatures: (Signature, Signature),
        now: Time,
        registry: &KeyRegistry,
    ) -> Result<Signature, RegisterError> {
        let reg = registration_digest(self.channel, version, digest);
        let (a, b) = (SignerId::Party(self.parties.0), SignerId::Party(self.parties.1));
        let ok = (registry.verify_for(&signatures.0, a, reg) && registry.verify_for(&signatures.1, b, reg))
            || (registry.verify_for(&signatures.0, b, reg) && registry.verify_for(&signatures.1, a, reg));
        if !ok {
            return Err(RegisterError::BadSignature);
        }
        if let Some(latest) = self.latest() {
            if latest.version == version {
                return if latest.digest == digest {
                    Ok(member.sign(reg))
                } else {
                    Err(RegisterError::Conflict(version))
                };
            }
            if version < latest.version {
                return Err(RegisterError::Stale {
                    version,
                    latest: latest.version,
                });
            }
        }
        self.history.push(RegistrationRecord {
            version,
            digest,
            signatures,
            received_at: now,
        });
        Ok(member.sign(reg))
    }
}
