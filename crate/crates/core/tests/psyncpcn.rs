use pcn_core::broadcast::CostModel;
use pcn_core::channel::CpState;
use pcn_core::psyncpcn;
use pcn_core::scenario::generate::{random_scenario, GenOptions};
use pcn_core::scenario::properties::{check_all, Property};
use pcn_core::scenario::{ChannelSpec, PaymentSpec, Protocol, ScenarioConfig};

fn line(protocol: Protocol, k: usize, n: usize) -> ScenarioConfig {
    let mut cfg: ScenarioConfig =
        serde_json::from_str(r#"{"seed":11,"channels":[],"payments":[],"network":{"kind":"partially-synchronous"}}"#)
            .unwrap();
    cfg.protocol = protocol;
    cfg.channels = (0..k as u32)
        .map(|i| ChannelSpec {
            a: i,
            b: i + 1,
            deposit_a: 1000,
            deposit_b: 1000,
            fee: 1,
            timelock: 6,
            committee_size: n,
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

/// One ordering instance per PAY and per upstream SUCCESS, each followed by
/// notices from every member to both parties, plus one logical send to
/// start each instance.
fn expected_messages(model: CostModel, n: u64, k: u64) -> u64 {
    let c = match model {
        CostModel::PbftLike => 2 * n * n + n,
        CostModel::HotstuffLike => 8 * n,
    };
    (2 * k - 1) * (2 * n + c + 1)
}

fn expected_latency(model: CostModel, delta: u64, k: u64) -> u64 {
    let rounds = match model {
        CostModel::PbftLike => 3,
        CostModel::HotstuffLike => 8,
    };
    (2 * k - 1) * (rounds + 1) * delta + delta
}

#[test]
fn fault_free_counts_and_latency() {
    for protocol in [Protocol::Psyncpcn, Protocol::PsyncpcnFull] {
        for model in [CostModel::PbftLike, CostModel::HotstuffLike] {
            for delta in [1, 2] {
                for n in [4, 7] {
                    for k in 1..=4 {
                        let mut cfg = line(protocol, k, n);
                        cfg.delta = delta;
                        cfg.cost_model = model;
                        let r = psyncpcn::run(&cfg);
                        let at = format!("{protocol:?} {model:?} δ={delta} n={n} k={k}");
                        let (nn, kk) = (n as u64, k as u64);
                        assert!(r.quiescent, "{at}");
                        assert_eq!(
                            r.messages_accounted,
                            expected_messages(model, nn, kk),
                            "{at} {:?}",
                            r.message_counts
                        );
                        assert_eq!(
                            r.payments[0].completed_at,
                            Some(expected_latency(model, delta, kk)),
                            "{at}"
                        );
                        assert!(
                            r.payments[0].hop_states.iter().all(|s| *s == CpState::Paid),
                            "{at} {:?}",
                            r.payments[0].hop_states
                        );
                    }
                }
            }
        }
    }
}

fn parse(json: &str) -> ScenarioConfig {
    let cfg: ScenarioConfig = serde_json::from_str(json).unwrap();
    pcn_core::scenario::validate(&cfg).unwrap();
    cfg
}

fn holdings_sum(r: &pcn_core::scenario::RunReport) -> (u64, u64) {
    r.holdings.values().fold((0, 0), |(a, b), (x, y)| (a + x, b + y))
}

#[test]
fn full_mode_moves_value_and_fees() {
    let r = psyncpcn::run(&line(Protocol::PsyncpcnFull, 3, 4));
    assert_eq!(r.payments[0].amounts, vec![102, 101, 100]);
    let (init, fin) = holdings_sum(&r);
    assert_eq!(init, fin);
    let gain = |p: u32| r.holdings[&p].1 as i64 - r.holdings[&p].0 as i64;
    assert_eq!((gain(0), gain(1), gain(2), gain(3)), (-102, 1, 1, 100));
}

#[test]
fn simplified_mode_tracks_only_the_payer_side() {
    let r = psyncpcn::run(&line(Protocol::Psyncpcn, 2, 4));
    assert_eq!(r.payments[0].amounts, vec![100, 100]);
    let gain = |p: u32| r.holdings[&p].1 as i64 - r.holdings[&p].0 as i64;
    assert_eq!((gain(0), gain(1), gain(2)), (-100, -100, 0));
}

/// Under the simplified pseudocode one sender-chosen Id travels the whole
/// path, so two paths that diverge after the first hop leave a gap in the
/// second branch's expected Ids.
#[test]
fn simplified_ids_stall_on_diverging_paths() {
    let cfg = parse(
        r#"{"protocol":"psyncpcn","seed":3,"network":{"kind":"partially-synchronous"},
            "channels":[{"a":0,"b":1,"deposit_a":100,"deposit_b":100},
                        {"a":1,"b":2,"deposit_a":100,"deposit_b":100},
                        {"a":1,"b":3,"deposit_a":100,"deposit_b":100}],
            "payments":[{"sender":0,"receiver":2,"value":5,"path":[0,1,2]},
                        {"sender":0,"receiver":3,"value":5,"path":[0,1,3],"start":1}]}"#,
    );
    let r = psyncpcn::run(&cfg);
    assert_eq!(r.payments[0].hop_states, vec![CpState::Paid, CpState::Paid]);
    assert_eq!(r.payments[1].hop_states, vec![CpState::Locked, CpState::Unlocked]);
    assert_eq!(r.payments[1].completed_at, None);
    assert!(r.trace.find("defer PAY").is_some());

    let mut full = cfg.clone();
    full.protocol = Protocol::PsyncpcnFull;
    let r = psyncpcn::run(&full);
    for p in &r.payments {
        assert!(p.hop_states.iter().all(|s| *s == CpState::Paid), "{:?}", p.hop_states);
    }
}

#[test]
fn insufficient_balance_downstream_rejects_back() {
    for protocol in [Protocol::Psyncpcn, Protocol::PsyncpcnFull] {
        let mut cfg = line(protocol, 3, 4);
        cfg.channels[2].deposit_a = 50;
        let r = psyncpcn::run(&cfg);
        assert_eq!(
            r.payments[0].hop_states,
            vec![CpState::Revoked, CpState::Revoked, CpState::Unlocked]
        );
        assert_eq!(r.payments[0].completed_at, None);
        assert!(r.holdings.values().all(|(a, b)| a == b));
    }
}

#[test]
fn sender_refuses_payment_beyond_available_balance() {
    let mut cfg = line(Protocol::Psyncpcn, 1, 4);
    cfg.channels[0].deposit_a = 50;
    let r = psyncpcn::run(&cfg);
    assert_eq!(r.payments[0].hop_states, vec![CpState::Unlocked]);
    assert_eq!(r.messages_total, 0);
}

fn with_member_faults(mut cfg: ScenarioConfig, behaviors: &[&str]) -> ScenarioConfig {
    let faults: String = (0..cfg.channels.len())
        .map(|c| format!(r#""{c}":{{"{}":"{}"}}"#, c % 4, behaviors[c % behaviors.len()]))
        .collect::<Vec<_>>()
        .join(",");
    cfg.faults = serde_json::from_str(&format!(r#"{{"byzantine_members":{{{faults}}}}}"#)).unwrap();
    cfg
}

#[test]
fn payments_complete_with_f_faulty_members() {
    for behavior in ["silent", "sign-anything", "withhold-acks", "stall-leader"] {
        for protocol in [Protocol::Psyncpcn, Protocol::PsyncpcnFull] {
            for model in [CostModel::PbftLike, CostModel::HotstuffLike] {
                let mut cfg = with_member_faults(line(protocol, 3, 4), &[behavior]);
                cfg.cost_model = model;
                let r = psyncpcn::run(&cfg);
                let at = format!("{behavior} {protocol:?} {model:?}");
                assert!(r.quiescent, "{at}");
                assert!(r.payments[0].completed_at.is_some(), "{at}");
                assert!(r.payments[0].hop_states.iter().all(|s| *s == CpState::Paid), "{at}");
            }
        }
    }
}

#[test]
fn payments_complete_after_gst() {
    let mut cfg = with_member_faults(line(Protocol::PsyncpcnFull, 3, 7), &["silent", "stall-leader"]);
    cfg.network = serde_json::from_str(r#"{"kind":"partially-synchronous","delay":"uniform","gst":40}"#).unwrap();
    cfg.delta = 2;
    for seed in 0..20 {
        cfg.seed = seed;
        let r = psyncpcn::run(&cfg);
        assert!(r.quiescent, "seed {seed}");
        assert!(
            r.payments[0].hop_states.iter().all(|s| *s == CpState::Paid),
            "seed {seed}"
        );
    }
}

#[test]
fn equivocating_sender_gets_one_payment_at_most() {
    let mut cfg = line(Protocol::PsyncpcnFull, 2, 4);
    cfg.faults = serde_json::from_str(r#"{"byzantine_parties":{"0":{"kind":"equivocate"}}}"#).unwrap();
    let r = psyncpcn::run(&cfg);
    let (init, fin) = holdings_sum(&r);
    assert_eq!(init, fin);
    let receiver = r.holdings[&2].1 - r.holdings[&2].0;
    assert!(receiver == 0 || receiver == 100 || receiver == 101, "{receiver}");
    assert!(r.payments[0].hop_states.iter().all(|s| *s != CpState::Locked));
}

fn closing(at: u64) -> ScenarioConfig {
    let mut cfg = line(Protocol::PsyncpcnFull, 2, 4);
    cfg.closures = serde_json::from_str(&format!(r#"[{{"party":0,"peer":1,"at":{at}}}]"#)).unwrap();
    cfg
}

fn closure_time(r: &pcn_core::scenario::RunReport) -> Option<u64> {
    r.trace
        .records()
        .iter()
        .find(|t| t.annotation.starts_with("stable closure"))
        .map(|t| t.time)
}

#[test]
fn closure_without_pending_payments_is_immediate() {
    let mut cfg = closing(0);
    cfg.payments.clear();
    let r = psyncpcn::run(&cfg);
    assert_eq!(r.closed_channels, vec![pcn_core::ledger::ChannelId(0)]);
    assert_eq!(r.holdings[&0], (1000, 1000));
    assert!(closure_time(&r).is_some());
}

#[test]
fn closure_waits_for_in_flight_payment() {
    let r = psyncpcn::run(&closing(2));
    assert_eq!(r.closed_channels, vec![pcn_core::ledger::ChannelId(0)]);
    assert_eq!(r.payments[0].hop_states, vec![CpState::Paid, CpState::Paid]);
    let done = r.payments[0].completed_at.unwrap();
    assert!(closure_time(&r).unwrap() >= done);
    assert_eq!(r.holdings[&0].1, 1000 - 101);
}

#[test]
fn closure_before_payment_refuses_it() {
    let mut cfg = closing(0);
    cfg.payments[0].start = 6;
    let r = psyncpcn::run(&cfg);
    assert_eq!(r.payments[0].hop_states, vec![CpState::Unlocked, CpState::Unlocked]);
    assert_eq!(r.holdings[&0], (1000, 1000));
}

#[test]
fn forged_closure_balance_is_outvoted() {
    let mut cfg = with_member_faults(closing(0), &["sign-anything"]);
    cfg.payments.clear();
    let r = psyncpcn::run(&cfg);
    assert_eq!(r.closed_channels, vec![pcn_core::ledger::ChannelId(0)]);
    assert!(r.ledger_json.contains("1000"));
    assert_eq!(r.holdings[&0], (1000, 1000));
}

/// Honest logs of one committee never diverge: each is a prefix of the
/// longest.
fn logs_agree(w: &psyncpcn::PsyncWorld) -> Result<(), String> {
    let mut by_committee: std::collections::BTreeMap<u32, Vec<Vec<pcn_core::crypto::Digest>>> = Default::default();
    for m in w.members().filter(|m| m.is_honest()) {
        by_committee.entry(m.committee).or_default().push(m.log_digests());
    }
    for (c, logs) in by_committee {
        let longest = logs.iter().max_by_key(|l| l.len()).unwrap();
        if logs.iter().any(|l| longest[..l.len()] != l[..]) {
            return Err(format!("committee {c} logs diverge"));
        }
    }
    Ok(())
}

fn property_suite(protocol: Protocol, runs: u64) {
    let opts = GenOptions {
        protocol,
        ..GenOptions::default()
    };
    let (mut applicable_def2, mut faulty) = (0, 0);
    for seed in 0..runs {
        let cfg = random_scenario(seed, opts);
        let mut w = psyncpcn::PsyncWorld::new(&cfg);
        w.run();
        let r = w.report(&cfg);
        assert!(!r.budget_exceeded, "seed {seed}");
        logs_agree(&w).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        for v in check_all(&r, &cfg) {
            assert!(v.pass, "{protocol:?} seed {seed}: {} {:?}", v.name, v.detail);
            if v.property == Property::Def2 && v.applicable {
                applicable_def2 += 1;
            }
        }
        if protocol == Protocol::PsyncpcnFull && cfg.closures.is_empty() {
            let (init, fin) = holdings_sum(&r);
            assert_eq!(init, fin, "seed {seed}");
        }
        faulty += usize::from(!cfg.faults.byzantine_members.is_empty());
    }
    assert!(applicable_def2 > 0 && faulty > 0);
}

#[test]
fn random_scenarios_keep_all_properties_simplified() {
    property_suite(Protocol::Psyncpcn, 1000);
}

#[test]
fn random_scenarios_keep_all_properties_full() {
    property_suite(Protocol::PsyncpcnFull, 1000);
}
