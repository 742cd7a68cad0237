//! Sender-side payment setup and the per-hop acceptance checks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::{
    build_onion, CryptoError, HopPayload, LockCondition, LockFunction, LockTuple, OnionKey, OnionPacket, Witness,
};
use crate::simnet::Time;

/// Public forwarding parameters of the channel `γ_i` leaving `P_i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HopPolicy {
    pub fee: u64,
    /// `TL_i`, relative.
    pub timelock: Time,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaymentPlan {
    pub payment_id: u64,
    /// `P_0..P_k`.
    pub path: Vec<u32>,
    pub value: u64,
    /// `ℓ_0..ℓ_{k-1}`.
    pub secrets: Vec<Witness>,
    /// `y_j = ℓ_0 + .. + ℓ_j`.
    pub witnesses: Vec<Witness>,
    /// `Y_j = H(y_j)`.
    pub conditions: Vec<LockCondition>,
    /// `v_0..v_{k-1}`.
    pub amounts: Vec<u64>,
    /// Relative `T_0..T_{k-1}`.
    pub timelocks: Vec<Time>,
    /// Absolute time that relative timelocks are measured from.
    pub anchor: Time,
    /// Payload for `P_i` at index `i - 1`.
    pub payloads: Vec<HopPayload>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SetupError {
    #[error("path needs at least a sender and a receiver")]
    ShortPath,
    #[error("path visits party {0} twice")]
    Cyclic(u32),
    #[error("expected {expected} hop policies, got {got}")]
    PolicyCount { expected: usize, got: usize },
    #[error("timelock {timelock} below 6 delta = {min}")]
    TimelockTooShort { timelock: Time, min: Time },
    #[error(transparent)]
    Onion(#[from] CryptoError),
}

impl PaymentPlan {
    pub fn hops(&self) -> usize {
        self.path.len() - 1
    }

    pub fn absolute_timelock(&self, i: usize) -> Time {
        self.anchor + self.timelocks[i]
    }

    pub fn onion(&self, keys: &[OnionKey]) -> Result<OnionPacket, CryptoError> {
        build_onion(&self.path, &self.payloads, keys)
    }
}

/// `v_i = v + Σ_{j=i+1}^{k-1} f_j` where `policies[j]` belongs to `γ_j`
/// (index 0, the sender's channel, carries no fee).
pub fn hop_amounts(value: u64, policies: &[HopPolicy]) -> Vec<u64> {
    let k = policies.len();
    (0..k)
        .map(|i| value + policies[i + 1..].iter().map(|p| p.fee).sum::<u64>())
        .collect()
}

/// `T_i = Σ_{j=i+1}^{k} TL_j`, with `TL_j` of `γ_j` for `j < k` and the
/// receiver's `final_timelock` as `TL_k`.
pub fn hop_timelocks(policies: &[HopPolicy], final_timelock: Time) -> Vec<Time> {
    let k = policies.len();
    (0..k)
        .map(|i| policies[i + 1..].iter().map(|p| p.timelock).sum::<Time>() + final_timelock)
        .collect()
}

/// Builds the AMHL conditions, amounts, timelocks and per-hop payloads.
/// `policies[i]` describes `γ_i`; `anchor` is the absolute origin for the
/// relative timelocks.
#[allow(clippy::too_many_arguments)]
pub fn setup_payment<R: Rng + ?Sized>(
    lock: &LockFunction,
    rng: &mut R,
    payment_id: u64,
    path: &[u32],
    value: u64,
    policies: &[HopPolicy],
    final_timelock: Time,
    delta: Time,
    anchor: Time,
) -> Result<PaymentPlan, SetupError> {
    if path.len() < 2 {
        return Err(SetupError::ShortPath);
    }
    let mut seen = std::collections::BTreeSet::new();
    for &p in path {
        if !seen.insert(p) {
            return Err(SetupError::Cyclic(p));
        }
    }
    let k = path.len() - 1;
    if policies.len() != k {
        return Err(SetupError::PolicyCount {
            expected: k,
            got: policies.len(),
        });
    }
    for tl in policies[1..].iter().map(|p| p.timelock).chain([final_timelock]) {
        if tl < 6 * delta {
            return Err(SetupError::TimelockTooShort {
                timelock: tl,
                min: 6 * delta,
            });
        }
    }
    let secrets: Vec<Witness> = (0..k).map(|_| lock.random_scalar(rng)).collect();
    let mut witnesses = Vec::with_capacity(k);
    let mut acc = Witness(0);
    for &l in &secrets {
        acc = lock.add(acc, l);
        witnesses.push(acc);
    }
    let conditions: Vec<LockCondition> = witnesses
        .iter()
        .map(|&y| lock.apply(y).expect("sums are reduced mod the group order"))
        .collect();
    let amounts = hop_amounts(value, policies);
    let timelocks = hop_timelocks(policies, final_timelock);
    let payloads = (1..=k)
        .map(|i| HopPayload {
            next_party: path.get(i + 1).copied(),
            // Intermediaries learn their outgoing CP, the receiver its incoming one.
            amount: amounts[i.min(k - 1)],
            lock: (i < k).then(|| LockTuple {
                prev: conditions[i - 1],
                cond: conditions[i],
                share: secrets[i],
            }),
            timelock: anchor + timelocks[i.min(k - 1)],
            payment_id,
        })
        .collect();
    Ok(PaymentPlan {
        payment_id,
        path: path.to_vec(),
        value,
        secrets,
        witnesses,
        conditions,
        amounts,
        timelocks,
        anchor,
        payloads,
    })
}

/// Why a hop refused to lock.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    Balance,
    Fee,
    Timelock,
    Amhl,
    /// The incoming condition differs from `Y_{i-1}` in the payload.
    Condition,
    /// The payload names a successor without a channel to this party.
    NoChannel,
    ReceiverTimelock,
    ReceiverAmount,
    Onion,
    Busy,
    Closing,
    Refused,
    Spacing,
    InvalidUpdate,
    Deadline,
}

/// What `P_i` knows about the CP it is being asked to accept.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IncomingCp {
    pub amount: u64,
    /// Absolute.
    pub timelock: Time,
    pub condition: LockCondition,
}

/// What `P_i` knows about its outgoing channel toward `payload.next_party`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OutgoingChannel {
    pub balance: u64,
    pub policy: HopPolicy,
}

/// The four acceptance checks of an intermediary, plus the consistency of the
/// incoming condition with the payload.
pub fn validate_hop(
    lock: &LockFunction,
    incoming: &IncomingCp,
    payload: &HopPayload,
    outgoing: Option<OutgoingChannel>,
) -> Result<(), RejectReason> {
    let Some(out) = outgoing else {
        return Err(RejectReason::NoChannel);
    };
    let Some(l) = payload.lock else {
        return Err(RejectReason::Amhl);
    };
    if out.balance < payload.amount {
        return Err(RejectReason::Balance);
    }
    if incoming.amount < payload.amount || incoming.amount - payload.amount < out.policy.fee {
        return Err(RejectReason::Fee);
    }
    if incoming.timelock < payload.timelock || incoming.timelock - payload.timelock < out.policy.timelock {
        return Err(RejectReason::Timelock);
    }
    let combined = lock.apply(l.share).and_then(|h| lock.combine(h, l.prev));
    if combined != Ok(l.cond) {
        return Err(RejectReason::Amhl);
    }
    if l.prev != incoming.condition {
        return Err(RejectReason::Condition);
    }
    Ok(())
}

/// The receiver checks the remaining time against its own `TL_k`, and that
/// it is offered at least the agreed value.
pub fn validate_receiver(
    incoming: &IncomingCp,
    expected_value: u64,
    final_timelock: Time,
    now: Time,
) -> Result<(), RejectReason> {
    if incoming.timelock < now || incoming.timelock - now < final_timelock {
        return Err(RejectReason::ReceiverTimelock);
    }
    if incoming.amount < expected_value {
        return Err(RejectReason::ReceiverAmount);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pol(fee: u64, tl: Time) -> HopPolicy {
        HopPolicy { fee, timelock: tl }
    }

    #[test]
    fn amounts_and_timelocks() {
        let p = [pol(0, 6), pol(1, 6), pol(1, 6)];
        assert_eq!(hop_amounts(100, &p), vec![102, 101, 100]);
        assert_eq!(hop_timelocks(&p, 6), vec![18, 12, 6]);
    }

    #[test]
    fn single_hop_plan() {
        let lf = LockFunction::toy();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let plan = setup_payment(&lf, &mut rng, 0, &[0, 1], 5, &[pol(0, 6)], 6, 1, 0).unwrap();
        assert_eq!(plan.conditions[0], lf.apply(plan.secrets[0]).unwrap());
        assert_eq!(plan.payloads.len(), 1);
        assert_eq!(plan.payloads[0].next_party, None);
        assert_eq!(plan.payloads[0].lock, None);
    }

    #[test]
    fn honest_hops_accept() {
        let lf = LockFunction::toy();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = [pol(0, 6), pol(1, 6), pol(1, 6)];
        let plan = setup_payment(&lf, &mut rng, 0, &[0, 1, 2, 3], 100, &p, 6, 1, 0).unwrap();
        for i in 1..3 {
            let incoming = IncomingCp {
                amount: plan.amounts[i - 1],
                timelock: plan.absolute_timelock(i - 1),
                condition: plan.conditions[i - 1],
            };
            let out = OutgoingChannel {
                balance: 1000,
                policy: p[i],
            };
            assert_eq!(validate_hop(&lf, &incoming, &plan.payloads[i - 1], Some(out)), Ok(()));
        }
        let last = IncomingCp {
            amount: plan.amounts[2],
            timelock: plan.absolute_timelock(2),
            condition: plan.conditions[2],
        };
        assert_eq!(validate_receiver(&last, 100, 6, 0), Ok(()));
        assert_eq!(validate_receiver(&last, 100, 6, 1), Err(RejectReason::ReceiverTimelock));
    }

    #[test]
    fn distinct_rejections() {
        let lf = LockFunction::toy();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = [pol(0, 6), pol(2, 6), pol(1, 6)];
        let plan = setup_payment(&lf, &mut rng, 0, &[0, 1, 2, 3], 100, &p, 6, 1, 0).unwrap();
        let incoming = IncomingCp {
            amount: plan.amounts[0],
            timelock: plan.absolute_timelock(0),
            condition: plan.conditions[0],
        };
        let out = OutgoingChannel {
            balance: 1000,
            policy: p[1],
        };
        let base = plan.payloads[0];
        let check = |pl: HopPayload, o: Option<OutgoingChannel>| validate_hop(&lf, &incoming, &pl, o);
        assert_eq!(
            check(base, Some(OutgoingChannel { balance: 5, ..out })),
            Err(RejectReason::Balance)
        );
        assert_eq!(
            check(
                HopPayload {
                    amount: base.amount + 1,
                    ..base
                },
                Some(out)
            ),
            Err(RejectReason::Fee)
        );
        assert_eq!(
            check(
                HopPayload {
                    timelock: base.timelock + 1,
                    ..base
                },
                Some(out)
            ),
            Err(RejectReason::Timelock)
        );
        let mut l = base.lock.unwrap();
        l.cond = lf.combine(l.cond, lf.apply(Witness(1)).unwrap()).unwrap();
        assert_eq!(
            check(HopPayload { lock: Some(l), ..base }, Some(out)),
            Err(RejectReason::Amhl)
        );
        assert_eq!(check(base, None), Err(RejectReason::NoChannel));
    }

    #[test]
    fn witness_chain_unwinds() {
        let lf = LockFunction::toy();
        // y_1 = 7, ℓ_1 = 4 → y_0 = 3.
        let y0 = lf.sub(Witness(7), Witness(4));
        assert_eq!(y0, Witness(3));
        assert_eq!(lf.apply(y0).unwrap(), LockCondition(10));
    }

    #[test]
    fn setup_errors() {
        let lf = LockFunction::toy();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(
            setup_payment(&lf, &mut rng, 0, &[0, 1, 2], 1, &[pol(0, 6), pol(0, 5)], 6, 1, 0),
            Err(SetupError::TimelockTooShort { timelock: 5, min: 6 })
        );
        assert_eq!(
            setup_payment(&lf, &mut rng, 0, &[0, 1, 0], 1, &[pol(0, 6), pol(0, 6)], 6, 1, 0),
            Err(SetupError::Cyclic(0))
        );
    }
}
