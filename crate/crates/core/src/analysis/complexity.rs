//! Message and latency formulas for one k-hop payment, and comparison of
//! instrumented runs against them.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::broadcast::{measure_instance, CostModel};
use crate::scenario::{self, ChannelSpec, PaymentSpec, Protocol, RunReport, ScenarioConfig};
use crate::simnet::Time;

use super::AnalysisError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Expected {
    pub messages: u64,
    /// In time units, not δ.
    pub latency: Time,
}

fn check(n: u64, k: u64, delta: Time) -> Result<(), AnalysisError> {
    if n == 0 || k == 0 {
        return Err(AnalysisError::Domain(format!(
            "need n ≥ 1 and k ≥ 1, got n = {n}, k = {k}"
        )));
    }
    if delta == 0 {
        return Err(AnalysisError::Domain("delta must be at least 1".into()));
    }
    Ok(())
}

pub fn syncpcn_expected(n: u64, k: u64, delta: Time) -> Result<Expected, AnalysisError> {
    check(n, k, delta)?;
    Ok(Expected {
        messages: 8 * n * k + 3 * k + 2,
        latency: (8 * k + 2) * delta,
    })
}

/// `c_lat` is in time units.
pub fn psyncpcn_expected(n: u64, k: u64, c_msg: u64, c_lat: Time, delta: Time) -> Result<Expected, AnalysisError> {
    check(n, k, delta)?;
    Ok(Expected {
        messages: (2 * k - 1) * (2 * n + c_msg + 1),
        latency: 2 * k * c_lat + 2 * delta,
    })
}

/// The asymptotic rows: `4kn²` / `18kn` messages, `6kδ` / `16kδ` latency.
pub fn theta(model: CostModel, n: u64, k: u64, delta: Time) -> Expected {
    match model {
        CostModel::PbftLike => Expected {
            messages: 4 * k * n * n,
            latency: 6 * k * delta,
        },
        CostModel::HotstuffLike => Expected {
            messages: 18 * k * n,
            latency: 16 * k * delta,
        },
    }
}

pub const BAND: (f64, f64) = (0.5, 2.0);

fn in_band(x: f64) -> bool {
    (BAND.0..=BAND.1).contains(&x)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComplexityReport {
    pub protocol: Protocol,
    pub k: u64,
    pub n: u64,
    pub delta: Time,
    pub cost_model: Option<CostModel>,
    pub measured_messages: u64,
    /// In δ.
    pub measured_latency: f64,
    pub expected_messages: u64,
    /// In δ.
    pub expected_latency: f64,
    pub message_ratio: f64,
    pub latency_ratio: f64,
    /// Exact match for SyncPCN; both ratios inside [`BAND`] for PSyncPCN.
    pub pass: bool,
    pub breakdown: BTreeMap<String, u64>,
    pub mismatch: Option<String>,
}

impl ComplexityReport {
    pub const CSV_HEADER: &'static str = "protocol,cost_model,n,k,delta,measured_messages,expected_messages,message_ratio,measured_latency,expected_latency,latency_ratio,pass";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.4},{},{},{:.4},{}",
            self.protocol.name(),
            self.cost_model.map_or("-", |m| m.name()),
            self.n,
            self.k,
            self.delta,
            self.measured_messages,
            self.expected_messages,
            self.message_ratio,
            self.measured_latency,
            self.expected_latency,
            self.latency_ratio,
            self.pass
        )
    }
}

/// Compares a fault-free single-payment run with the formulas. For PSyncPCN
/// the expected values use the Θ rows; the exact total with the instrumented
/// per-instance cost is checked too.
pub fn compare_trace(report: &RunReport, n: u64, k: u64) -> Result<ComplexityReport, AnalysisError> {
    let delta = report.delta;
    let payment = report
        .payments
        .first()
        .ok_or_else(|| AnalysisError::Domain("run has no payment".into()))?;
    let done = payment
        .completed_at
        .ok_or_else(|| AnalysisError::Domain("payment did not complete".into()))?;
    let measured_latency = (done - payment.started_at) as f64 / delta as f64;
    let measured = report.messages_accounted;
    let mut mismatch = None;
    let (expected, model) = match report.protocol {
        Protocol::Syncpcn => (syncpcn_expected(n, k, delta)?, None),
        Protocol::Psyncpcn | Protocol::PsyncpcnFull => {
            let model = report.cost_model;
            let inst = measure_instance(model, n as usize, delta);
            let exact = psyncpcn_expected(n, k, inst.messages, inst.latency, delta)?;
            if exact.messages != measured {
                mismatch = Some(format!(
                    "accounted {measured} != (2k-1)(2n+C+1) = {} with C = {}",
                    exact.messages, inst.messages
                ));
            }
            (theta(model, n, k, delta), Some(model))
        }
    };
    let expected_latency = expected.latency as f64 / delta as f64;
    let message_ratio = measured as f64 / expected.messages as f64;
    let latency_ratio = measured_latency / expected_latency;
    let pass = match model {
        None => {
            if measured != expected.messages || measured_latency != expected_latency {
                mismatch = Some(format!(
                    "measured ({measured}, {measured_latency}δ) != expected ({}, {expected_latency}δ)",
                    expected.messages
                ));
            }
            mismatch.is_none()
        }
        Some(_) => mismatch.is_none() && in_band(message_ratio) && in_band(latency_ratio),
    };
    Ok(ComplexityReport {
        protocol: report.protocol,
        k,
        n,
        delta,
        cost_model: model,
        measured_messages: measured,
        measured_latency,
        expected_messages: expected.messages,
        expected_latency,
        message_ratio,
        latency_ratio,
        pass,
        breakdown: report.message_counts.clone(),
        mismatch,
    })
}

/// A line of parties `0..=k` with one payment end to end and no faults.
pub fn happy_path(protocol: Protocol, model: CostModel, n: usize, k: usize, delta: Time) -> ScenarioConfig {
    let mut cfg: ScenarioConfig = serde_json::from_str(r#"{"channels":[]}"#).expect("minimal config parses");
    cfg.protocol = protocol;
    cfg.cost_model = model;
    cfg.delta = delta;
    cfg.network.kind = match protocol {
        Protocol::Syncpcn => scenario::NetworkKind::Synchronous,
        _ => scenario::NetworkKind::PartiallySynchronous,
    };
    cfg.channels = (0..k as u32)
        .map(|i| ChannelSpec {
            a: i,
            b: i + 1,
            deposit_a: 1_000,
            deposit_b: 1_000,
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

/// Runs [`happy_path`] and compares it with the formulas.
pub fn measure(
    protocol: Protocol,
    model: CostModel,
    n: usize,
    k: usize,
    delta: Time,
) -> Result<ComplexityReport, AnalysisError> {
    let cfg = happy_path(protocol, model, n, k, delta);
    let report = scenario::run(&cfg).map_err(|e| AnalysisError::Run(e.to_string()))?;
    compare_trace(&report, n as u64, k as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formula_examples() {
        assert_eq!(
            syncpcn_expected(4, 1, 1).unwrap(),
            Expected {
                messages: 37,
                latency: 10
            }
        );
        assert_eq!(
            syncpcn_expected(4, 2, 1).unwrap(),
            Expected {
                messages: 72,
                latency: 18
            }
        );
        assert!(syncpcn_expected(0, 2, 1).is_err());
        assert_eq!(
            psyncpcn_expected(4, 2, 48, 3, 1).unwrap(),
            Expected {
                messages: 171,
                latency: 14
            }
        );
        assert_eq!(psyncpcn_expected(7, 1, 10, 3, 1).unwrap().messages, 2 * 7 + 10 + 1);
        assert!(psyncpcn_expected(4, 1, 48, 3, 0).is_err());
    }
}
