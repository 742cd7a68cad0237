use pcn_core::crypto::{LockCondition, LockFunction, Witness};
use pcn_core::syncpcn::{setup_payment, validate_hop, HopPolicy, IncomingCp, OutgoingChannel, RejectReason};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const P: u64 = 23;
const Q: u64 = 22;
const G: u64 = 5;

fn naive_pow(e: u64) -> u64 {
    (0..e % Q).fold(1, |acc, _| acc * G % P)
}

#[derive(Clone, Copy, Debug)]
enum Tamper {
    Share,
    Prev,
    Cond,
}

fn plan_strategy() -> impl Strategy<Value = (u64, usize, Vec<(u64, u64)>)> {
    (any::<u64>(), 2usize..=6)
        .prop_flat_map(|(seed, k)| (Just(seed), Just(k), prop::collection::vec((0u64..5, 6u64..12), k)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn lock_chain_matches_independent_oracle((seed, k, pol) in plan_strategy(), tamper in 0usize..4, hop in 1usize..6) {
        let lock = LockFunction::toy();
        let policies: Vec<HopPolicy> = pol.iter().map(|&(fee, timelock)| HopPolicy { fee, timelock }).collect();
        let path: Vec<u32> = (0..=k as u32).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plan = setup_payment(&lock, &mut rng, 1, &path, 100, &policies, 6, 1, 50).unwrap();

        // y_i is the prefix sum of the shares; Y_i = g^{y_i}.
        let mut y = 0;
        for i in 0..k {
            y = (y + plan.secrets[i].0) % Q;
            prop_assert_eq!(plan.witnesses[i], Witness(y));
            prop_assert_eq!(plan.conditions[i], LockCondition(naive_pow(y)));
        }
        for i in 1..k {
            prop_assert_eq!(lock.sub(plan.witnesses[i], plan.secrets[i]), plan.witnesses[i - 1]);
        }

        let i = 1 + (hop - 1) % (k - 1);
        let incoming = IncomingCp {
            amount: plan.amounts[i - 1],
            timelock: plan.absolute_timelock(i - 1),
            condition: plan.conditions[i - 1],
        };
        let out = OutgoingChannel { balance: 1_000, policy: policies[i] };
        let mut payload = plan.payloads[i - 1];
        let l = payload.lock.as_mut().unwrap();
        let expected = match [None, Some(Tamper::Share), Some(Tamper::Prev), Some(Tamper::Cond)][tamper] {
            None => Ok(()),
            Some(Tamper::Share) => {
                l.share = Witness((l.share.0 + 1) % Q);
                Err(RejectReason::Amhl)
            }
            Some(Tamper::Prev) => {
                l.prev = LockCondition(l.prev.0 * G % P);
                Err(RejectReason::Amhl)
            }
            Some(Tamper::Cond) => {
                l.cond = LockCondition(l.cond.0 * G % P);
                Err(RejectReason::Amhl)
            }
        };
        prop_assert_eq!(validate_hop(&lock, &incoming, &payload, Some(out)), expected);
    }
}
