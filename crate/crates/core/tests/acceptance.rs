//! One line per acceptance criterion, written straight to stdout so it shows
//! without `--nocapture`.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use num_rational::BigRational;
use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pcn_core::analysis::sampling::{standard_grid, GRID_GLOBAL};
use pcn_core::analysis::{
    committee_correct_probability, forwarding_is_rational, incentive_threshold, measure, SamplingParams,
};
use pcn_core::broadcast::CostModel;
use pcn_core::channel::CpState;
use pcn_core::crypto::{LockCondition, LockFunction, Witness};
use pcn_core::scenario::artifacts::{metrics_json, verdicts, verdicts_json};
use pcn_core::scenario::generate::{random_scenario, wormhole_scenario, GenOptions};
use pcn_core::scenario::properties::{check_all, wormhole_gain};
use pcn_core::scenario::{self, ChannelSpec, PaymentSpec, Protocol, RunReport, ScenarioConfig};
use pcn_core::simnet::{PartyBehavior, TraceKind};
use pcn_core::syncpcn::{setup_payment, validate_hop, HopPolicy, IncomingCp, OutgoingChannel, RejectReason};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn table2_syncpcn() -> Outcome {
    let mut slowest = Duration::ZERO;
    for k in 1..=3u64 {
        for n in [4u64, 7] {
            let t = Instant::now();
            let r = measure(Protocol::Syncpcn, CostModel::PbftLike, n as usize, k as usize, 1)
                .map_err(|e| e.to_string())?;
            slowest = slowest.max(t.elapsed());
            ensure(r.measured_messages == 8 * n * k + 3 * k + 2, || {
                format!("n={n} k={k}: {} messages", r.measured_messages)
            })?;
            ensure(r.measured_latency == (8 * k + 2) as f64, || {
                format!("n={n} k={k}: latency {}δ", r.measured_latency)
            })?;
        }
    }
    ensure(slowest < Duration::from_secs(1), || format!("slowest cell {slowest:?}"))?;
    Ok(format!("6 cells exact, slowest {slowest:.1?}"))
}

fn table2_psyncpcn() -> Outcome {
    let mut slowest = Duration::ZERO;
    let (mut lo, mut hi) = (f64::MAX, f64::MIN);
    let mut cells = 0;
    for protocol in [Protocol::Psyncpcn, Protocol::PsyncpcnFull] {
        for model in [CostModel::PbftLike, CostModel::HotstuffLike] {
            for k in [1, 2] {
                for n in [4, 7] {
                    let t = Instant::now();
                    let r = measure(protocol, model, n, k, 1).map_err(|e| e.to_string())?;
                    slowest = slowest.max(t.elapsed());
                    for x in [r.message_ratio, r.latency_ratio] {
                        lo = lo.min(x);
                        hi = hi.max(x);
                    }
                    ensure(r.pass, || format!("{protocol:?} {model:?} n={n} k={k}: {r:?}"))?;
                    cells += 1;
                }
            }
        }
    }
    ensure(slowest < Duration::from_secs(5), || format!("slowest cell {slowest:?}"))?;
    Ok(format!(
        "{cells} cells, ratios in [{lo:.2}, {hi:.2}], exact totals match, slowest {slowest:.1?}"
    ))
}

fn sampling() -> Outcome {
    let p = |f| committee_correct_probability(SamplingParams::new(GRID_GLOBAL, f, 300).unwrap());
    let (p300, p325) = (p(300), p(325));
    ensure((0.998..=1.0).contains(&p300) && (p300 - 0.999).abs() <= 0.001, || {
        format!("P(300) = {p300}")
    })?;
    ensure((0.997..=0.999).contains(&p325) && (p325 - 0.998).abs() <= 0.001, || {
        format!("P(325) = {p325}")
    })?;
    let t = Instant::now();
    let grid = standard_grid();
    let took = t.elapsed();
    ensure(took < Duration::from_secs(10), || format!("grid took {took:?}"))?;
    let series = |f: u64| -> Vec<f64> { grid.iter().filter(|c| c.faulty == f).map(|c| c.p_correct).collect() };
    let s300 = series(300);
    ensure(s300.windows(2).all(|w| w[1] >= w[0]), || "F=300 not monotone".into())?;
    let d: Vec<f64> = series(400).windows(2).skip(2).map(|w| (w[1] - w[0]).abs()).collect();
    ensure(
        d.windows(2).all(|x| x[1] <= x[0] + 1e-12) && d.last().unwrap() < &1e-3,
        || "F=400 not converging".into(),
    )?;
    Ok(format!(
        "P = {p300:.5} / {p325:.5}, grid of {} cells in {took:.1?}",
        grid.len()
    ))
}

fn property_suites() -> Outcome {
    let t = Instant::now();
    let mut runs = 0;
    for protocol in [Protocol::Syncpcn, Protocol::Psyncpcn, Protocol::PsyncpcnFull] {
        let opts = GenOptions {
            protocol,
            ..GenOptions::default()
        };
        for seed in 0..1000 {
            let cfg = random_scenario(seed, opts);
            let r = scenario::run(&cfg).map_err(|e| format!("{protocol:?} seed {seed}: {e}"))?;
            ensure(!r.budget_exceeded, || {
                format!("{protocol:?} seed {seed}: budget exceeded")
            })?;
            for v in check_all(&r, &cfg) {
                ensure(v.pass, || {
                    format!("{protocol:?} seed {seed}: {} {:?}", v.name, v.detail)
                })?;
            }
            runs += 1;
        }
    }
    let took = t.elapsed();
    ensure(took < Duration::from_secs(300), || format!("took {took:?}"))?;
    Ok(format!(
        "{runs} runs over 3 protocol variants, 0 violations, {took:.1?}"
    ))
}

fn wormhole() -> Outcome {
    for seed in 0..500 {
        let cfg = wormhole_scenario(seed);
        let r = scenario::run(&cfg).map_err(|e| format!("seed {seed}: {e}"))?;
        let attackers: BTreeSet<u32> = cfg.faults.byzantine_parties.keys().copied().collect();
        let w = wormhole_gain(&r, &attackers);
        ensure(w.pass, || {
            format!("seed {seed}: gain {} > entitlement {}", w.gain, w.entitlement)
        })?;
        // Every honest party between the colluders settles both sides alike.
        let p = &r.payments[0];
        let (a, b) = (attackers.first().unwrap(), attackers.last().unwrap());
        for i in (*a as usize + 1)..(*b as usize) {
            let settled = |s: CpState| s == CpState::Paid;
            ensure(settled(p.hop_states[i - 1]) == settled(p.hop_states[i]), || {
                format!(
                    "seed {seed}: P{i} settled {:?}/{:?}",
                    p.hop_states[i - 1],
                    p.hop_states[i]
                )
            })?;
        }
    }
    Ok("500 schedules, 0 violations".into())
}

fn amhl() -> Outcome {
    const P: u64 = 23;
    const Q: u64 = 22;
    let lock = LockFunction::toy();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut accepted, mut rejected) = (0, 0);
    for case in 0..10_000 {
        let k = rng.gen_range(2..=6usize);
        let policies: Vec<HopPolicy> = (0..k)
            .map(|_| HopPolicy {
                fee: rng.gen_range(0..5),
                timelock: rng.gen_range(6..12),
            })
            .collect();
        let path: Vec<u32> = (0..=k as u32).collect();
        let plan = setup_payment(&lock, &mut rng, 1, &path, 100, &policies, 6, 1, 50).map_err(|e| e.to_string())?;
        let i = rng.gen_range(1..k);
        let incoming = IncomingCp {
            amount: plan.amounts[i - 1],
            timelock: plan.absolute_timelock(i - 1),
            condition: plan.conditions[i - 1],
        };
        let out = Some(OutgoingChannel {
            balance: 1_000,
            policy: policies[i],
        });
        let honest = plan.payloads[i - 1];
        ensure(validate_hop(&lock, &incoming, &honest, out) == Ok(()), || {
            format!("case {case}: honest plan rejected")
        })?;
        accepted += 1;
        for field in 0..4 {
            let mut t = honest;
            let l = t.lock.as_mut().unwrap();
            let want = match field {
                0 => {
                    t.amount += 1;
                    RejectReason::Fee
                }
                1 => {
                    t.timelock += 1;
                    RejectReason::Timelock
                }
                2 => {
                    l.cond = LockCondition(l.cond.0 * 5 % P);
                    RejectReason::Amhl
                }
                _ => {
                    l.share = Witness((l.share.0 + 1) % Q);
                    RejectReason::Amhl
                }
            };
            let got = validate_hop(&lock, &incoming, &t, out);
            ensure(got == Err(want), || format!("case {case} field {field}: {got:?}"))?;
            rejected += 1;
        }
    }
    Ok(format!("{accepted} honest plans accepted, {rejected} tampers rejected"))
}

fn line(k: usize) -> ScenarioConfig {
    let mut cfg: ScenarioConfig = serde_json::from_str(r#"{"seed":7,"channels":[]}"#).unwrap();
    cfg.channels = (0..k as u32)
        .map(|i| ChannelSpec {
            a: i,
            b: i + 1,
            deposit_a: 1000,
            deposit_b: 1000,
            fee: 1,
            timelock: 6,
            committee_size: 4,
        })
        .collect();
    cfg.payments = vec![PaymentSpec {
        sender: 0,
        receiver: k as u32,
        value: 100,
        path: (0..=k as u32).collect(),
        start: 0,
        final_timelock: 6,
    }];
    cfg
}

/// `T_1` of the second hop on a two-hop line, from the timelock layout.
fn second_hop_timelock(cfg: &ScenarioConfig) -> u64 {
    (4 * 2 + 2) * cfg.delta + cfg.payments[0].final_timelock * cfg.delta
}

fn steps(r: &RunReport, dispute: &str) -> Vec<Option<u64>> {
    (1..=4)
        .map(|s| {
            let note = format!("{dispute} step {s}");
            r.trace
                .records()
                .iter()
                .find(|t| t.kind == TraceKind::State && t.annotation.starts_with(&note))
                .map(|t| t.time)
        })
        .collect()
}

fn in_order(times: &[Option<u64>]) -> bool {
    times.iter().all(Option::is_some) && times.windows(2).all(|w| w[0] <= w[1])
}

fn dispute_timing() -> Outcome {
    let mut payee = line(2);
    payee
        .faults
        .byzantine_parties
        .insert(1, PartyBehavior::RefuseCooperativePay);
    let t = second_hop_timelock(&payee);
    let r = scenario::run(&payee).map_err(|e| e.to_string())?;
    let s = steps(&r, "payee-dispute");
    ensure(s[0] == Some(t - payee.delta) && in_order(&s), || {
        format!("payee dispute steps {s:?}, T = {t}")
    })?;
    ensure(r.payments[0].hop_states == [CpState::Paid, CpState::Paid], || {
        format!("payee dispute: {:?}", r.payments[0].hop_states)
    })?;
    // The payer of the same channel disputes too; the payee's witness wins.
    let race = steps(&r, "payer-dispute");
    ensure(
        race[0] == Some(t) && race[3].is_some() && r.closed_channels.len() == 1,
        || format!("race steps {race:?}"),
    )?;

    let mut payer = line(2);
    payer.faults.byzantine_parties.insert(2, PartyBehavior::WithholdWitness);
    let r = scenario::run(&payer).map_err(|e| e.to_string())?;
    let s = steps(&r, "payer-dispute");
    ensure(s[0] == Some(t) && in_order(&s), || {
        format!("payer dispute steps {s:?}, T = {t}")
    })?;
    ensure(r.payments[0].hop_states == [CpState::Revoked, CpState::Revoked], || {
        format!("payer dispute: {:?}", r.payments[0].hop_states)
    })?;
    Ok(format!(
        "payee dispute at T-δ = {}, payer dispute at T = {t}, race settles paid",
        t - payee.delta
    ))
}

fn determinism() -> Outcome {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut checked = 0;
    let mut names = Vec::new();
    for entry in std::fs::read_dir(&dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        if path.extension().is_some_and(|e| e == "json") {
            names.push(path);
        }
    }
    names.sort();
    for path in &names {
        let base = ScenarioConfig::from_json(&std::fs::read_to_string(path).unwrap()).map_err(|e| e.to_string())?;
        for seed in [base.seed, base.seed + 1, base.seed + 2] {
            let mut cfg = base.clone();
            cfg.seed = seed;
            let outputs = |cfg: &ScenarioConfig| -> Result<String, String> {
                let r = scenario::run(cfg).map_err(|e| e.to_string())?;
                Ok([
                    r.trace.to_ndjson(),
                    metrics_json(cfg, &r),
                    verdicts_json(&verdicts(cfg, &r)),
                ]
                .concat())
            };
            let first = outputs(&cfg)?;
            for _ in 1..10 {
                ensure(outputs(&cfg)? == first, || {
                    format!("{} seed {seed} differs", path.display())
                })?;
            }
            checked += 1;
        }
    }
    ensure(checked > 0, || "no bundled scenarios found".into())?;
    Ok(format!(
        "{} scenarios, {checked} scenario-seed pairs, 10 identical replays each",
        names.len()
    ))
}

fn incentive() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let r = |n: i64, d: i64| BigRational::new(n.into(), d.into());
    for case in 0..20 {
        let f: u64 = rng.gen_range(0..30);
        let (cm_n, cm_d) = (rng.gen_range(0..1000i64), rng.gen_range(1..100i64));
        let ps_d = rng.gen_range(1..=100i64);
        let ps_n = rng.gen_range(1..=ps_d);
        let (fee_n, fee_d) = (rng.gen_range(0..200_000i64), rng.gen_range(1..100i64));
        // threshold = 2(3f+1)·f_CM / p_S, worked by hand as one fraction.
        let members = 2 * (3 * f as i128 + 1);
        let (tn, td) = (members * cm_n as i128 * ps_d as i128, cm_d as i128 * ps_n as i128);
        let got = incentive_threshold(f, &r(cm_n, cm_d), &r(ps_n, ps_d)).map_err(|e| e.to_string())?;
        ensure(
            got.numer().to_i128().unwrap() * td == tn * got.denom().to_i128().unwrap(),
            || format!("case {case}: {got}"),
        )?;
        let rational = fee_n as i128 * td > tn * fee_d as i128;
        let said =
            forwarding_is_rational(&r(fee_n, fee_d), f, &r(cm_n, cm_d), &r(ps_n, ps_d)).map_err(|e| e.to_string())?;
        ensure(said == rational, || format!("case {case}: decision {said}"))?;
    }
    Ok("20 random triples agree".into())
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 9] = [
        ("SyncPCN message and latency formulas exact", table2_syncpcn),
        ("PSyncPCN within the complexity bands", table2_psyncpcn),
        ("committee sampling probabilities and curves", sampling),
        ("security properties over random runs", property_suites),
        ("wormhole attacks gain nothing", wormhole),
        ("AMHL validation accepts honest plans only", amhl),
        ("dispute timing and step sequence", dispute_timing),
        ("bundled scenarios replay identically", determinism),
        ("incentive threshold arithmetic", incentive),
    ];
    let mut out = std::io::stdout().lock();
    writeln!(out).unwrap();
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => writeln!(out, "criterion {}: PASS {name}: {detail}", i + 1).unwrap(),
            Err(detail) => {
                writeln!(out, "criterion {}: FAIL {name}: {detail}", i + 1).unwrap();
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
