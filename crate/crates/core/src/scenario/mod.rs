//! Scenario files, the runner that dispatches to a protocol, and the
//! trace-level property checks.

pub mod artifacts;
pub mod config;
pub mod generate;
pub mod properties;
pub mod validate;

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::channel::CpState;
use crate::ledger::ChannelId;
use crate::simnet::{Time, TraceLog};

pub use config::{ChannelSpec, ClosureSpec, NetworkKind, NetworkSpec, PaymentSpec, Protocol, ScenarioConfig};
pub use validate::{validate, ConfigError};

/// What happened to one payment, hop by hop.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PaymentReport {
    pub id: u64,
    pub path: Vec<u32>,
    pub channels: Vec<ChannelId>,
    /// `v_0..v_{k-1}`.
    pub amounts: Vec<u64>,
    /// Final state of `CP_i` on `γ_i`.
    pub hop_states: Vec<CpState>,
    pub started_at: Time,
    /// When the sender learned the payment went through.
    pub completed_at: Option<Time>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub protocol: Protocol,
    pub cost_model: crate::broadcast::CostModel,
    pub delta: Time,
    pub committee_sizes: Vec<usize>,
    pub message_counts: BTreeMap<String, u64>,
    pub messages_total: u64,
    /// Messages under the documented accounting convention.
    pub messages_accounted: u64,
    pub payments: Vec<PaymentReport>,
    pub honest_parties: BTreeSet<u32>,
    /// Party → (initial holdings, final holdings), locked coins counted for
    /// their payer.
    pub holdings: BTreeMap<u32, (u64, u64)>,
    pub quiescent: bool,
    pub budget_exceeded: bool,
    pub end_time: Time,
    pub closed_channels: Vec<ChannelId>,
    #[serde(skip)]
    pub trace: TraceLog,
    #[serde(skip)]
    pub ledger_json: String,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid scenario: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<ConfigError>),
    #[error(transparent)]
    Setup(#[from] crate::syncpcn::SetupError),
}

/// Validates `cfg` and runs it under its protocol.
pub fn run(cfg: &ScenarioConfig) -> Result<RunReport, RunError> {
    validate(cfg).map_err(RunError::Invalid)?;
    match cfg.protocol {
        Protocol::Syncpcn => Ok(crate::syncpcn::run(cfg)?),
        Protocol::Psyncpcn | Protocol::PsyncpcnFull => Ok(crate::psyncpcn::run(cfg)),
    }
}
