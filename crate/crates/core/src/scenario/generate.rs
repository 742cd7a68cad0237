//! Seeded random scenarios inside the threat model, for the property suites.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::broadcast::CostModel;
use crate::crypto::max_faults;
use crate::ledger::InclusionPolicy;
use crate::simnet::{DelayPolicy, FaultPlan, MemberBehavior, PartyBehavior, WormholeVariant};

use super::config::{ChannelSpec, ClosureSpec, NetworkKind, NetworkSpec, PaymentSpec, Protocol, ScenarioConfig};
use super::validate::validate;

/// Knobs for [`random_scenario`].
#[derive(Clone, Copy, Debug)]
pub struct GenOptions {
    pub protocol: Protocol,
    pub max_hops: usize,
    pub byzantine_parties: bool,
    pub byzantine_members: bool,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self {
            protocol: Protocol::Syncpcn,
            max_hops: 4,
            byzantine_parties: true,
            byzantine_members: true,
        }
    }
}

const PARTY_BEHAVIORS: [PartyBehavior; 5] = [
    PartyBehavior::Silent,
    PartyBehavior::WithholdWitness,
    PartyBehavior::RefuseCooperativePay,
    PartyBehavior::StaleClosure,
    PartyBehavior::Equivocate,
];

const MEMBER_BEHAVIORS: [MemberBehavior; 4] = [
    MemberBehavior::Silent,
    MemberBehavior::SignAnything,
    MemberBehavior::WithholdAcks,
    MemberBehavior::StallLeader,
];

/// A line of parties `0..=k` with up to three payments over sub-paths,
/// random deposits, fees and timelocks, and faults within the threat model.
pub fn random_scenario(seed: u64, opts: GenOptions) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let cfg = attempt(&mut rng, seed, opts);
        if validate(&cfg).is_ok() {
            return cfg;
        }
    }
}

fn attempt(rng: &mut ChaCha8Rng, seed: u64, opts: GenOptions) -> ScenarioConfig {
    let k = rng.gen_range(1..=opts.max_hops);
    let n = *[4usize, 7].choose(rng).expect("non-empty");
    let channels: Vec<ChannelSpec> = (0..k as u32)
        .map(|i| ChannelSpec {
            a: i,
            b: i + 1,
            deposit_a: rng.gen_range(60..400),
            deposit_b: rng.gen_range(60..400),
            fee: rng.gen_range(0..4),
            timelock: rng.gen_range(6..10),
            committee_size: n,
        })
        .collect();
    let mut payments = Vec::new();
    let count = rng.gen_range(1..=3);
    let mut start = 0;
    let spaced = rng.gen_bool(0.5);
    let mut first_hops = std::collections::BTreeSet::new();
    for _ in 0..count {
        let (mut x, mut y) = (rng.gen_range(0..=k as u32), rng.gen_range(0..=k as u32));
        while x == y {
            x = rng.gen_range(0..=k as u32);
            y = rng.gen_range(0..=k as u32);
        }
        let path: Vec<u32> = if x < y {
            (x..=y).collect()
        } else {
            (y..=x).rev().collect()
        };
        // The simplified pseudocode numbers payments per sender and first
        // hop only, so a second payment from there could wait forever on an
        // Id that never reaches its branch.
        if opts.protocol == Protocol::Psyncpcn && !first_hops.insert((path[0], path[1])) {
            continue;
        }
        payments.push(PaymentSpec {
            sender: x,
            receiver: y,
            value: rng.gen_range(1..120),
            path,
            start,
            final_timelock: rng.gen_range(6..10),
        });
        start += if spaced {
            rng.gen_range(60..120)
        } else {
            rng.gen_range(5..60)
        };
    }
    let mut faults = FaultPlan::default();
    if opts.byzantine_members {
        for c in 0..k as u32 {
            let f = rng.gen_range(0..=max_faults(n));
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.shuffle(rng);
            let m: BTreeMap<u32, MemberBehavior> = idx[..f]
                .iter()
                .map(|&j| (j, *MEMBER_BEHAVIORS.choose(rng).expect("non-empty")))
                .collect();
            if !m.is_empty() {
                faults.byzantine_members.insert(c, m);
            }
        }
    }
    if opts.byzantine_parties {
        let bad = rng.gen_range(0..=2usize.min(k));
        for _ in 0..bad {
            let p = rng.gen_range(0..=k as u32);
            faults
                .byzantine_parties
                .insert(p, *PARTY_BEHAVIORS.choose(rng).expect("non-empty"));
        }
    }
    let delay = *[DelayPolicy::Max, DelayPolicy::Uniform, DelayPolicy::Min]
        .choose(rng)
        .expect("non-empty");
    let network = match opts.protocol {
        Protocol::Syncpcn => NetworkSpec {
            kind: NetworkKind::Synchronous,
            delay,
            gst: 0,
        },
        _ => NetworkSpec {
            kind: NetworkKind::PartiallySynchronous,
            delay,
            gst: rng.gen_range(0..30),
        },
    };
    let cost_model = match opts.protocol {
        Protocol::Syncpcn => CostModel::default(),
        _ => *[CostModel::PbftLike, CostModel::HotstuffLike]
            .choose(rng)
            .expect("non-empty"),
    };
    let mut closures = Vec::new();
    if opts.protocol == Protocol::PsyncpcnFull && rng.gen_bool(0.3) {
        let c = rng.gen_range(0..k as u32);
        let (party, peer) = if rng.gen_bool(0.5) { (c, c + 1) } else { (c + 1, c) };
        closures.push(ClosureSpec {
            party,
            peer,
            at: rng.gen_range(0..150),
        });
    }
    ScenarioConfig {
        protocol: opts.protocol,
        delta: rng.gen_range(1..=3),
        seed,
        time_limit: 5_000,
        event_budget: 2_000_000,
        channels,
        payments,
        network,
        faults,
        cost_model,
        closures,
        ledger: InclusionPolicy::Uniform {
            max: rng.gen_range(1..40),
        },
    }
}

/// Colluding `P_α`, `P_β` with at least one honest party between them on a
/// single payment path.
pub fn wormhole_scenario(seed: u64) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.gen_range(4..=6usize);
    let alpha = rng.gen_range(1..=k - 3) as u32;
    let beta = rng.gen_range(alpha as usize + 2..=k - 1) as u32;
    let n = *[4usize, 7].choose(&mut rng).expect("non-empty");
    let channels = (0..k as u32)
        .map(|i| ChannelSpec {
            a: i,
            b: i + 1,
            deposit_a: 500,
            deposit_b: 500,
            fee: rng.gen_range(1..5),
            timelock: rng.gen_range(6..9),
            committee_size: n,
        })
        .collect();
    let variant = *[
        WormholeVariant::Skip,
        WormholeVariant::Withhold,
        WormholeVariant::Fallback,
    ]
    .choose(&mut rng)
    .expect("non-empty");
    let mut faults = FaultPlan::default();
    faults
        .byzantine_parties
        .insert(alpha, PartyBehavior::Wormhole { partner: beta, variant });
    faults.byzantine_parties.insert(
        beta,
        PartyBehavior::Wormhole {
            partner: alpha,
            variant,
        },
    );
    let delay = *[DelayPolicy::Max, DelayPolicy::Uniform, DelayPolicy::Min]
        .choose(&mut rng)
        .expect("non-empty");
    ScenarioConfig {
        protocol: Protocol::Syncpcn,
        delta: rng.gen_range(1..=3),
        seed,
        time_limit: 5_000,
        event_budget: 2_000_000,
        channels,
        payments: vec![PaymentSpec {
            sender: 0,
            receiver: k as u32,
            value: rng.gen_range(10..200),
            path: (0..=k as u32).collect(),
            start: 0,
            final_timelock: rng.gen_range(6..9),
        }],
        network: NetworkSpec {
            kind: NetworkKind::Synchronous,
            delay,
            gst: 0,
        },
        faults,
        cost_model: Default::default(),
        closures: vec![],
        ledger: InclusionPolicy::Uniform {
            max: rng.gen_range(1..40),
        },
    }
}
