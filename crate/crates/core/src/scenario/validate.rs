use std::collections::{BTreeMap, BTreeSet};

use crate::crypto::{max_faults, MAX_HOPS};
use crate::simnet::PartyBehavior;

use super::config::{NetworkKind, Protocol, ScenarioConfig};

/// One problem with a scenario, located by a JSON-style field path.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{path}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

fn err(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError {
        path: path.into(),
        message: message.into(),
    }
}

/// Lock horizon in δ: the time a `k`-hop payment needs before its receiver's
/// CP can be claimed in the synchronous protocol.
pub fn lock_horizon(k: usize) -> u64 {
    4 * k as u64 + 2
}

/// Every absolute timelock (in δ) a payment puts on each channel index.
pub fn payment_timelocks(cfg: &ScenarioConfig, p: usize) -> Vec<(usize, u64)> {
    let pay = &cfg.payments[p];
    let k = pay.path.len().saturating_sub(1);
    let chans: Vec<Option<usize>> = pay.path.windows(2).map(|w| channel_index(cfg, w[0], w[1])).collect();
    let mut out = Vec::new();
    for i in 0..k {
        let Some(ci) = chans[i] else { continue };
        let later: u64 = chans[i + 1..]
            .iter()
            .map(|c| c.map_or(0, |c| cfg.channels[c].timelock))
            .sum();
        out.push((ci, pay.start + lock_horizon(k) + later + pay.final_timelock));
    }
    out
}

pub fn channel_index(cfg: &ScenarioConfig, a: u32, b: u32) -> Option<usize> {
    cfg.channels
        .iter()
        .position(|c| (c.a, c.b) == (a, b) || (c.b, c.a) == (a, b))
}

/// Checks a scenario against the protocol's preconditions and the threat
/// model. Returns every problem found.
pub fn validate(cfg: &ScenarioConfig) -> Result<(), Vec<ConfigError>> {
    let mut errs = Vec::new();
    if cfg.delta == 0 {
        errs.push(err("delta", "must be at least 1"));
    }
    if cfg.time_limit == 0 {
        errs.push(err("time_limit", "must be positive"));
    }
    if cfg.event_budget == 0 {
        errs.push(err("event_budget", "must be positive"));
    }
    if cfg.channels.is_empty() {
        errs.push(err("channels", "at least one channel is required"));
    }
    if cfg.network.kind != NetworkKind::PartiallySynchronous && cfg.network.gst != 0 {
        errs.push(err("network.gst", "only meaningful for partially-synchronous networks"));
    }
    if cfg.protocol == Protocol::Syncpcn && cfg.network.kind != NetworkKind::Synchronous {
        errs.push(err("network.kind", "syncpcn requires a synchronous network"));
    }
    let mut parties = BTreeSet::new();
    let mut pairs = BTreeSet::new();
    for (i, c) in cfg.channels.iter().enumerate() {
        let at = |f: &str| format!("channels[{i}].{f}");
        if c.a == c.b {
            errs.push(err(at("b"), "a channel needs two distinct parties"));
        }
        if !pairs.insert((c.a.min(c.b), c.a.max(c.b))) {
            errs.push(err(at("b"), "duplicate channel between the same parties"));
        }
        if c.committee_size == 0 {
            errs.push(err(at("committee_size"), "must be at least 1"));
        }
        if c.timelock < 6 {
            errs.push(err(at("timelock"), "must be at least 6 (delta units)"));
        }
        parties.insert(c.a);
        parties.insert(c.b);
    }
    for (p, pay) in cfg.payments.iter().enumerate() {
        let at = |f: &str| format!("payments[{p}].{f}");
        if pay.value == 0 {
            errs.push(err(at("value"), "must be positive"));
        }
        if pay.path.len() < 2 {
            errs.push(err(at("path"), "needs at least sender and receiver"));
            continue;
        }
        if pay.path.len() - 1 > MAX_HOPS {
            errs.push(err(at("path"), format!("at most {MAX_HOPS} hops")));
        }
        if pay.path[0] != pay.sender {
            errs.push(err(at("path"), "must start at the sender"));
        }
        if pay.path.last() != Some(&pay.receiver) {
            errs.push(err(at("path"), "must end at the receiver"));
        }
        let distinct: BTreeSet<_> = pay.path.iter().collect();
        if distinct.len() != pay.path.len() {
            errs.push(err(at("path"), "must not repeat a party"));
        }
        for (h, w) in pay.path.windows(2).enumerate() {
            if channel_index(cfg, w[0], w[1]).is_none() {
                errs.push(err(
                    format!("payments[{p}].path[{}]", h + 1),
                    format!("no channel between {} and {}", w[0], w[1]),
                ));
            }
        }
        if pay.final_timelock < 6 {
            errs.push(err(at("final_timelock"), "must be at least 6 (delta units)"));
        }
    }
    for (i, c) in cfg.closures.iter().enumerate() {
        let at = format!("closures[{i}]");
        if cfg.protocol != Protocol::PsyncpcnFull {
            errs.push(err(at.clone(), "closures are scripted only for psyncpcn-full"));
        }
        if channel_index(cfg, c.party, c.peer).is_none() {
            errs.push(err(
                format!("{at}.peer"),
                format!("no channel between {} and {}", c.party, c.peer),
            ));
        }
    }
    // Pending CPs on one channel need timelocks at least 4δ apart.
    let mut per_channel: BTreeMap<usize, Vec<(usize, u64)>> = BTreeMap::new();
    for p in 0..cfg.payments.len() {
        for (c, t) in payment_timelocks(cfg, p) {
            per_channel.entry(c).or_default().push((p, t));
        }
    }
    for (c, ts) in per_channel.iter().filter(|_| cfg.protocol == Protocol::Syncpcn) {
        for (x, &(p, t)) in ts.iter().enumerate() {
            for &(q, u) in &ts[x + 1..] {
                if t.abs_diff(u) < 4 {
                    errs.push(err(
                        format!("payments[{q}].start"),
                        format!("timelock on channels[{c}] within 4 delta of payments[{p}]"),
                    ));
                }
            }
        }
    }
    for (&committee, members) in &cfg.faults.byzantine_members {
        let at = format!("faults.byzantine_members.{committee}");
        let Some(c) = cfg.channels.get(committee as usize) else {
            errs.push(err(at, "no such committee"));
            continue;
        };
        if members.len() > max_faults(c.committee_size) {
            errs.push(err(
                at.clone(),
                format!(
                    "{} faulty members exceed f = {}",
                    members.len(),
                    max_faults(c.committee_size)
                ),
            ));
        }
        for &j in members.keys() {
            if j as usize >= c.committee_size {
                errs.push(err(format!("{at}.{j}"), "member index out of range"));
            }
        }
    }
    for (&party, b) in &cfg.faults.byzantine_parties {
        let at = format!("faults.byzantine_parties.{party}");
        if !parties.contains(&party) {
            errs.push(err(at.clone(), "unknown party"));
        }
        if let PartyBehavior::Wormhole { partner, .. } = b {
            if *partner == party || !parties.contains(partner) {
                errs.push(err(format!("{at}.partner"), "must be another known party"));
            }
        }
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(errs)
    }
}
