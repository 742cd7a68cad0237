use serde::{Deserialize, Serialize};

use crate::simnet::Time;

/// Message pattern of the ordering protocol, i.e. the cost model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostModel {
    /// Leader proposal followed by two all-to-all voting rounds.
    #[default]
    PbftLike,
    /// Linear pattern: votes go to the leader, which fans out certificates.
    HotstuffLike,
}

impl CostModel {
    pub fn name(self) -> &'static str {
        match self {
            CostModel::PbftLike => "pbft-like",
            CostModel::HotstuffLike => "hotstuff-like",
        }
    }

    /// Voting phases per slot.
    pub fn phases(self) -> u8 {
        match self {
            CostModel::PbftLike => 2,
            CostModel::HotstuffLike => 3,
        }
    }

    /// Messages of one fault-free instance, self-addressed ones included.
    pub fn instance_messages(self, n: u64) -> u64 {
        match self {
            // propose n + prepare n^2 + commit n^2
            CostModel::PbftLike => 2 * n * n + n,
            // new-view n + propose n + 3 x (votes n + certificate n)
            CostModel::HotstuffLike => 8 * n,
        }
    }

    /// Latency of one fault-free instance in units of δ.
    pub fn instance_rounds(self) -> u64 {
        match self {
            CostModel::PbftLike => 3,
            CostModel::HotstuffLike => 8,
        }
    }

    pub fn instance_latency(self, delta: Time) -> Time {
        self.instance_rounds() * delta
    }

    /// View-change timeout before any doubling.
    pub fn base_timeout(self, delta: Time) -> Time {
        2 * (self.instance_latency(delta) + delta)
    }
}
