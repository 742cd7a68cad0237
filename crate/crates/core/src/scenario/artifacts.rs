//! Files written for a run: trace, metrics and property verdicts.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::analysis::{compare_trace, ComplexityReport};
use crate::simnet::{PartyBehavior, Time};

use super::properties::{check_all, wormhole_gain, Verdict, WormholeCheck};
use super::{RunReport, ScenarioConfig};

pub const TRACE_FILE: &str = "trace.ndjson";
pub const METRICS_FILE: &str = "metrics.json";
pub const VERDICTS_FILE: &str = "verdicts.json";
pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Serialize)]
pub struct Metrics<'a> {
    #[serde(flatten)]
    pub report: &'a RunReport,
    /// Completion time minus start time, per payment.
    pub payment_latency: Vec<Option<Time>>,
    /// Formula comparison for fault-free single-payment runs.
    pub complexity: Option<ComplexityReport>,
    pub wormhole: Option<WormholeCheck>,
}

pub fn metrics<'a>(cfg: &ScenarioConfig, report: &'a RunReport) -> Metrics<'a> {
    let fault_free =
        cfg.faults.byzantine_members.values().all(|m| m.is_empty()) && cfg.faults.byzantine_parties.is_empty();
    let complexity = match (fault_free, report.payments.as_slice()) {
        (true, [p]) if p.completed_at.is_some() => {
            let n = report.committee_sizes.first().copied().unwrap_or(0) as u64;
            let uniform = report.committee_sizes.iter().all(|&s| s as u64 == n);
            uniform
                .then(|| compare_trace(report, n, p.channels.len() as u64).ok())
                .flatten()
        }
        _ => None,
    };
    let attackers: BTreeSet<u32> = cfg
        .faults
        .byzantine_parties
        .iter()
        .filter_map(|(&p, b)| match b {
            PartyBehavior::Wormhole { partner, .. } => Some([p, *partner]),
            _ => None,
        })
        .flatten()
        .collect();
    Metrics {
        report,
        payment_latency: report
            .payments
            .iter()
            .map(|p| p.completed_at.map(|t| t - p.started_at))
            .collect(),
        complexity,
        wormhole: (!attackers.is_empty()).then(|| wormhole_gain(report, &attackers)),
    }
}

pub fn metrics_json(cfg: &ScenarioConfig, report: &RunReport) -> String {
    serde_json::to_string_pretty(&metrics(cfg, report)).expect("metrics serialize")
}

/// All four checks, always.
pub fn verdicts(cfg: &ScenarioConfig, report: &RunReport) -> Vec<Verdict> {
    check_all(report, cfg)
}

pub fn verdicts_json(verdicts: &[Verdict]) -> String {
    serde_json::to_string_pretty(verdicts).expect("verdicts serialize")
}
