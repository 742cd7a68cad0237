use num_rational::BigRational;
use num_traits::ToPrimitive;
use proptest::prelude::*;

use pcn_core::analysis::sampling::{bft_sizes, curve, standard_grid, GRID_FAULTY};
use pcn_core::analysis::{
    committee_correct_exact, committee_correct_probability, forwarding_is_rational, incentive_threshold, measure,
    SamplingParams,
};
use pcn_core::broadcast::CostModel;
use pcn_core::scenario::Protocol;

/// Counts correct committees by listing every subset of a small population
/// whose first `faulty` members are faulty.
fn enumerate(global: u32, faulty: u32, size: u32) -> (u64, u64) {
    let (mut good, mut all) = (0, 0);
    for mask in 0u64..(1 << global) {
        if mask.count_ones() != size {
            continue;
        }
        all += 1;
        let bad = (mask & ((1 << faulty) - 1)).count_ones();
        if bad <= size / 3 {
            good += 1;
        }
    }
    (good, all)
}

/// Hypergeometric mass built in log space from the ratio of consecutive
/// terms, independent of big-integer binomials.
fn float_oracle(global: u64, faulty: u64, size: u64) -> f64 {
    let honest = global - faulty;
    let lo = size.saturating_sub(honest);
    let ln_choose = |n: u64, k: u64| -> f64 { (0..k).map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln()).sum() };
    let mut ln_p = ln_choose(faulty, lo) + ln_choose(honest, size - lo) - ln_choose(global, size);
    let mut sum = 0.0;
    for f in lo..=size.min(faulty) {
        if f > size / 3 {
            break;
        }
        sum += ln_p.exp();
        let num = ((faulty - f) * (size - f)) as f64;
        let den = ((f + 1) * (honest + f + 1 - size)) as f64;
        ln_p += num.ln() - den.ln();
    }
    sum
}

#[test]
fn small_populations_match_enumeration() {
    for global in 1..=12u32 {
        for faulty in 0..=global {
            for size in 1..=global {
                let (good, all) = enumerate(global, faulty, size);
                let exact =
                    committee_correct_exact(SamplingParams::new(global as u64, faulty as u64, size as u64).unwrap());
                assert_eq!(
                    exact,
                    BigRational::new(good.into(), all.into()),
                    "{global} {faulty} {size}"
                );
            }
        }
    }
    let p = SamplingParams::new(6, 2, 3).unwrap();
    assert_eq!(committee_correct_exact(p), BigRational::new(16.into(), 20.into()));
    assert_eq!(committee_correct_probability(p), 0.8);
}

#[test]
fn no_faulty_members_means_certainty() {
    for size in [1, 4, 300, 1200] {
        assert_eq!(
            committee_correct_probability(SamplingParams::new(1200, 0, size).unwrap()),
            1.0
        );
    }
}

#[test]
fn stated_probabilities_for_committees_of_300() {
    let p300 = committee_correct_probability(SamplingParams::new(1200, 300, 300).unwrap());
    let p325 = committee_correct_probability(SamplingParams::new(1200, 325, 300).unwrap());
    assert!((0.998..=1.0).contains(&p300), "{p300}");
    assert!((0.997..=0.999).contains(&p325), "{p325}");
    assert!((p300 - 0.999).abs() <= 0.001 && (p325 - 0.998).abs() <= 0.001);
    assert!((p300 - float_oracle(1200, 300, 300)).abs() < 1e-9);
    assert!((p325 - float_oracle(1200, 325, 300)).abs() < 1e-9);
}

#[test]
fn standard_grid_matches_float_oracle_and_shapes() {
    let started = std::time::Instant::now();
    let grid = standard_grid();
    assert!(started.elapsed().as_secs() < 10);
    assert_eq!(grid.len(), 7 * 200);
    for p in grid.iter().step_by(13) {
        let o = float_oracle(p.global, p.faulty, p.size);
        assert!((p.p_correct - o).abs() < 1e-9, "{p:?} vs {o}");
    }
    let series = |f: u64| -> Vec<(u64, f64)> {
        grid.iter()
            .filter(|p| p.faulty == f)
            .map(|p| (p.size, p.p_correct))
            .collect()
    };
    for f in GRID_FAULTY {
        let s = series(f);
        let tail: Vec<f64> = s.iter().filter(|(n, _)| *n >= 10).map(|x| x.1).collect();
        match f {
            f if 3 * f < 1200 => assert!(tail.windows(2).all(|w| w[1] >= w[0]), "F={f} not increasing"),
            f if 3 * f > 1200 => assert!(tail.windows(2).all(|w| w[1] <= w[0]), "F={f} not decreasing"),
            _ => {
                // At F = N/3 the curve flattens out: successive changes shrink.
                let d: Vec<f64> = tail.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
                assert!(d.windows(2).all(|x| x[1] <= x[0] + 1e-12), "F={f} not converging");
                assert!(d.last().unwrap() < &1e-3);
            }
        }
    }
    // The whole series for F = 300 rises, from the smallest committee on.
    assert!(series(300).windows(2).all(|w| w[1].1 >= w[0].1));
}

#[test]
fn full_mass_is_one() {
    for (nn, ff, n) in [(1200, 300, 300), (1200, 450, 601), (50, 17, 20)] {
        let p = SamplingParams::new(nn, ff, n).unwrap();
        let total: num_bigint::BigUint = pcn_core::analysis::sampling::faulty_counts(p).iter().sum();
        assert_eq!(total, pcn_core::analysis::sampling::binomial(nn, n));
    }
    let c = curve(1200, 300, &bft_sizes(3)).unwrap();
    assert!(c.iter().all(|p| (0.0..=1.0).contains(&p.p_correct)));
}

fn frac(n: i64, d: i64) -> BigRational {
    BigRational::new(n.into(), d.into())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    /// `fee·p_S > 2(3f+1)·f_CM`, decided by integer cross-multiplication.
    #[test]
    fn incentive_threshold_matches_cross_multiplication(
        f in 0u64..20,
        cm in (0i64..1_000, 1i64..100),
        ps in (1i64..=100, 1i64..=100).prop_filter("p_S ≤ 1", |(a, b)| a <= b),
        fee in (0i64..100_000, 1i64..100),
    ) {
        let (cm_r, ps_r, fee_r) = (frac(cm.0, cm.1), frac(ps.0, ps.1), frac(fee.0, fee.1));
        let t = incentive_threshold(f, &cm_r, &ps_r).unwrap();
        let k = 2 * (3 * f as i128 + 1);
        // t = k·cm0·ps1 / (cm1·ps0)
        prop_assert_eq!(t.numer().to_i128().unwrap() * (cm.1 as i128 * ps.0 as i128),
                        t.denom().to_i128().unwrap() * k * cm.0 as i128 * ps.1 as i128);
        let lhs = fee.0 as i128 * ps.0 as i128 * cm.1 as i128;
        let rhs = k * cm.0 as i128 * fee.1 as i128 * ps.1 as i128;
        prop_assert_eq!(forwarding_is_rational(&fee_r, f, &cm_r, &ps_r).unwrap(), lhs > rhs);
    }
}

#[test]
fn measured_complexity_matches_formulas() {
    let r = measure(Protocol::Syncpcn, CostModel::PbftLike, 4, 2, 1).unwrap();
    assert_eq!((r.measured_messages, r.message_ratio, r.pass), (72, 1.0, true));
    for model in [CostModel::PbftLike, CostModel::HotstuffLike] {
        for protocol in [Protocol::Psyncpcn, Protocol::PsyncpcnFull] {
            for (n, k) in [(4, 1), (4, 2), (7, 1), (7, 2)] {
                let r = measure(protocol, model, n, k, 2).unwrap();
                assert!(r.pass, "{r:?}");
                assert!(r.mismatch.is_none());
            }
        }
    }
}
