//! Trace-level checks of balance security, correctness, coin availability
//! and atomicity, plus the wormhole gain bound.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::channel::CpState;

use super::validate::payment_timelocks;
use super::{PaymentReport, RunReport, ScenarioConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Property {
    Def1,
    Def2,
    Def3,
    Def4,
}

impl Property {
    pub const ALL: [Property; 4] = [Property::Def1, Property::Def2, Property::Def3, Property::Def4];

    pub fn name(self) -> &'static str {
        match self {
            Property::Def1 => "balance-security",
            Property::Def2 => "correctness",
            Property::Def3 => "coin-availability",
            Property::Def4 => "atomicity",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Property::Def1 => "def1",
            Property::Def2 => "def2",
            Property::Def3 => "def3",
            Property::Def4 => "def4",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "def1" => Some(Property::Def1),
            "def2" => Some(Property::Def2),
            "def3" => Some(Property::Def3),
            "def4" => Some(Property::Def4),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub property: Property,
    pub name: &'static str,
    pub pass: bool,
    /// False when the run does not meet the property's precondition.
    pub applicable: bool,
    pub detail: Option<String>,
    /// Index of the first trace record about the offending payment.
    pub trace_index: Option<usize>,
}

fn settled(s: CpState) -> CpState {
    match s {
        CpState::Unlocked => CpState::Revoked,
        other => other,
    }
}

fn pointer(report: &RunReport, p: &PaymentReport) -> Option<usize> {
    report.trace.find(&format!("#{} ", p.id))
}

fn verdict(report: &RunReport, property: Property, applicable: bool, bad: Option<(&PaymentReport, String)>) -> Verdict {
    Verdict {
        property,
        name: property.name(),
        pass: bad.is_none(),
        applicable,
        trace_index: bad.as_ref().and_then(|(p, _)| pointer(report, p)),
        detail: bad.map(|(_, d)| d),
    }
}

/// Every honest intermediary ends with both adjacent CPs paid or both not.
pub fn balance_security(report: &RunReport) -> Verdict {
    let bad = report.payments.iter().find_map(|p| {
        (1..p.path.len() - 1).find_map(|i| {
            let party = p.path[i];
            let (a, b) = (settled(p.hop_states[i - 1]), settled(p.hop_states[i]));
            (report.honest_parties.contains(&party) && a != b).then(|| {
                (
                    p,
                    format!(
                        "payment {}: intermediary {party} ends with incoming {a:?}, outgoing {b:?}",
                        p.id
                    ),
                )
            })
        })
    });
    verdict(report, Property::Def1, true, bad)
}

/// Whether every payment can lock all its hops at once from the deposits.
pub fn sufficient_balance(cfg: &ScenarioConfig) -> bool {
    let mut need: BTreeMap<(usize, bool), u64> = BTreeMap::new();
    for p in &cfg.payments {
        let k = p.path.len() - 1;
        let fees: Vec<u64> = p
            .path
            .windows(2)
            .map(|w| super::validate::channel_index(cfg, w[0], w[1]).map_or(0, |c| cfg.channels[c].fee))
            .collect();
        for (i, w) in p.path.windows(2).enumerate() {
            let Some(c) = super::validate::channel_index(cfg, w[0], w[1]) else {
                return false;
            };
            let amount = p.value + fees[i + 1..k].iter().sum::<u64>();
            *need.entry((c, cfg.channels[c].a == w[0])).or_default() += amount;
        }
    }
    need.iter().all(|(&(c, from_a), &n)| {
        let ch = &cfg.channels[c];
        n <= if from_a { ch.deposit_a } else { ch.deposit_b }
    })
}

/// Payments sharing a channel do not overlap: each starts only after every
/// timelock of the earlier ones (plus the payee's closing window) has passed.
pub fn sequential_on_channels(cfg: &ScenarioConfig) -> bool {
    let locks: Vec<Vec<(usize, u64)>> = (0..cfg.payments.len()).map(|p| payment_timelocks(cfg, p)).collect();
    (0..cfg.payments.len()).all(|j| {
        (0..cfg.payments.len())
            .filter(|&i| i != j && cfg.payments[i].start <= cfg.payments[j].start)
            .all(|i| {
                let shared = locks[i].iter().any(|(c, _)| locks[j].iter().any(|(d, _)| c == d));
                let end = locks[i].iter().map(|&(_, t)| t).max().unwrap_or(0) + 2;
                !shared || cfg.payments[j].start > end
            })
    })
}

/// All-honest runs with enough balance end with every CP paid.
pub fn correctness(report: &RunReport, cfg: &ScenarioConfig) -> Verdict {
    let no_faults =
        cfg.faults.byzantine_members.values().all(|m| m.is_empty()) && cfg.faults.byzantine_parties.is_empty();
    let concurrent_ok = cfg.protocol != super::Protocol::Syncpcn || sequential_on_channels(cfg);
    let applicable = no_faults && cfg.closures.is_empty() && sufficient_balance(cfg) && concurrent_ok;
    let bad = if applicable {
        report.payments.iter().find_map(|p| {
            p.hop_states
                .iter()
                .position(|s| *s != CpState::Paid)
                .map(|i| (p, format!("payment {}: hop {i} ends {:?}", p.id, p.hop_states[i])))
        })
    } else {
        None
    };
    verdict(report, Property::Def2, applicable, bad)
}

/// At quiescence no CP on a channel of an honest party is still locked.
pub fn coin_availability(report: &RunReport) -> Verdict {
    let applicable = report.quiescent;
    let bad = if applicable {
        report.payments.iter().find_map(|p| {
            p.hop_states.iter().enumerate().find_map(|(i, s)| {
                let honest =
                    report.honest_parties.contains(&p.path[i]) || report.honest_parties.contains(&p.path[i + 1]);
                (*s == CpState::Locked && honest).then(|| (p, format!("payment {}: hop {i} still locked", p.id)))
            })
        })
    } else {
        None
    };
    verdict(report, Property::Def3, applicable, bad)
}

/// With an honest sender, no unpaid hop whose payee is honest sits between
/// two paid hops.
pub fn atomicity(report: &RunReport) -> Verdict {
    let bad = report.payments.iter().find_map(|p| {
        if !report.honest_parties.contains(&p.path[0]) {
            return None;
        }
        let paid: Vec<bool> = p.hop_states.iter().map(|s| *s == CpState::Paid).collect();
        let k = paid.len();
        (0..k).find_map(|i| {
            let hole = !paid[i] && report.honest_parties.contains(&p.path[i + 1]);
            let before = paid[..i].iter().any(|&x| x);
            let after = paid[i + 1..].iter().any(|&x| x);
            (hole && before && after).then(|| (p, format!("payment {}: hop {i} unpaid between paid hops", p.id)))
        })
    });
    verdict(report, Property::Def4, true, bad)
}

pub fn check(report: &RunReport, cfg: &ScenarioConfig, which: &[Property]) -> Vec<Verdict> {
    which
        .iter()
        .map(|p| match p {
            Property::Def1 => balance_security(report),
            Property::Def2 => correctness(report, cfg),
            Property::Def3 => coin_availability(report),
            Property::Def4 => atomicity(report),
        })
        .collect()
}

pub fn check_all(report: &RunReport, cfg: &ScenarioConfig) -> Vec<Verdict> {
    check(report, cfg, &Property::ALL)
}

/// What each party nets if every payment settles paid end to end.
pub fn honest_entitlement(report: &RunReport, party: u32) -> i128 {
    report
        .payments
        .iter()
        .map(|p| {
            let k = p.amounts.len();
            match p.path.iter().position(|&x| x == party) {
                Some(0) => -(p.amounts[0] as i128),
                Some(i) if i == k => p.amounts[k - 1] as i128,
                Some(i) => p.amounts[i - 1] as i128 - p.amounts[i] as i128,
                None => 0,
            }
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct WormholeCheck {
    pub attackers: BTreeSet<u32>,
    pub gain: i128,
    pub entitlement: i128,
    /// Gain beyond the entitlement, floored at zero.
    pub excess: i128,
    pub pass: bool,
}

/// The colluders' aggregate gain never exceeds what honest forwarding pays.
pub fn wormhole_gain(report: &RunReport, attackers: &BTreeSet<u32>) -> WormholeCheck {
    let gain: i128 = attackers
        .iter()
        .filter_map(|a| report.holdings.get(a))
        .map(|&(init, fin)| fin as i128 - init as i128)
        .sum();
    let entitlement: i128 = attackers.iter().map(|&a| honest_entitlement(report, a).max(0)).sum();
    WormholeCheck {
        attackers: attackers.clone(),
        gain,
        entitlement,
        excess: (gain - entitlement).max(0),
        pass: gain <= entitlement,
    }
}
