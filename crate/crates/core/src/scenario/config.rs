//! Declarative scenario files. All times are integer multiples of δ, all
//! amounts integer base units.

use serde::{Deserialize, Serialize};

use crate::broadcast::CostModel;
use crate::ledger::InclusionPolicy;
use crate::simnet::{DelayPolicy, FaultPlan, NetworkModel, Time};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    #[default]
    Syncpcn,
    Psyncpcn,
    PsyncpcnFull,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Syncpcn => "syncpcn",
            Protocol::Psyncpcn => "psyncpcn",
            Protocol::PsyncpcnFull => "psyncpcn-full",
        }
    }
}

fn one() -> Time {
    1
}
fn six() -> Time {
    6
}
fn four() -> usize {
    4
}
fn default_limit() -> Time {
    1_000
}
fn default_budget() -> u64 {
    2_000_000
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub a: u32,
    pub b: u32,
    pub deposit_a: u64,
    pub deposit_b: u64,
    /// Fee charged for forwarding into this channel.
    #[serde(default)]
    pub fee: u64,
    /// `TL` of this channel, in δ.
    #[serde(default = "six")]
    pub timelock: Time,
    #[serde(default = "four")]
    pub committee_size: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaymentSpec {
    pub sender: u32,
    pub receiver: u32,
    pub value: u64,
    /// Every party from sender to receiver.
    pub path: Vec<u32>,
    /// In δ.
    #[serde(default)]
    pub start: Time,
    /// The receiver's `TL_k`, in δ.
    #[serde(default = "six")]
    pub final_timelock: Time,
}

/// A party asking the committee of one of its channels to close it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClosureSpec {
    pub party: u32,
    pub peer: u32,
    /// In δ.
    pub at: Time,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkKind {
    #[default]
    Synchronous,
    PartiallySynchronous,
    Asynchronous,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    #[serde(default)]
    pub kind: NetworkKind,
    #[serde(default)]
    pub delay: DelayPolicy,
    /// In δ; only for partial synchrony.
    #[serde(default)]
    pub gst: Time,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub protocol: Protocol,
    #[serde(default = "one")]
    pub delta: Time,
    #[serde(default)]
    pub seed: u64,
    /// In δ.
    #[serde(default = "default_limit")]
    pub time_limit: Time,
    #[serde(default = "default_budget")]
    pub event_budget: u64,
    pub channels: Vec<ChannelSpec>,
    #[serde(default)]
    pub payments: Vec<PaymentSpec>,
    /// Committee-run closures; full PSyncPCN only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub closures: Vec<ClosureSpec>,
    #[serde(default)]
    pub network: NetworkSpec,
    #[serde(default)]
    pub faults: FaultPlan,
    #[serde(default)]
    pub cost_model: CostModel,
    /// Inclusion delay of the ledger, in raw time units.
    #[serde(default)]
    pub ledger: InclusionPolicy,
}

impl ScenarioConfig {
    pub fn network_model(&self) -> NetworkModel {
        let d = self.delta;
        match self.network.kind {
            NetworkKind::Synchronous => NetworkModel::synchronous(d, self.network.delay),
            NetworkKind::PartiallySynchronous => NetworkModel::PartiallySynchronous {
                delta: d,
                gst: self.network.gst * d,
                delay: self.network.delay,
            },
            NetworkKind::Asynchronous => NetworkModel::asynchronous(d),
        }
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
