use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Scripted misbehavior of a committee member.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MemberBehavior {
    /// Never sends anything.
    Silent,
    /// Signs whatever it is asked to sign, including conflicting digests and
    /// stale closures.
    SignAnything,
    /// Stores registrations but never acknowledges them.
    WithholdAcks,
    /// As a total-order leader, never proposes.
    StallLeader,
}

/// Scripted misbehavior of a channel party.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PartyBehavior {
    /// Ignores every message.
    Silent,
    /// Payee keeps the witness to itself; intermediary does not forward it.
    WithholdWitness,
    /// Accepts locks but refuses to countersign payment updates.
    RefuseCooperativePay,
    /// Tries to close its channels with an older registered state.
    StaleClosure,
    /// Broadcasts different digests to different committee members.
    Equivocate,
    /// Colludes with `partner` to skip the honest parties in between.
    Wormhole { partner: u32, variant: WormholeVariant },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WormholeVariant {
    /// Upstream colluder presents the downstream witness to its predecessor.
    #[default]
    Skip,
    /// Downstream colluder withholds everything from the honest middle.
    Withhold,
    /// Attempts the skip, then behaves honestly if it fails.
    Fallback,
}

/// Which nodes are corrupted and how.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultPlan {
    /// Committee id → member index → behavior.
    #[serde(default)]
    pub byzantine_members: BTreeMap<u32, BTreeMap<u32, MemberBehavior>>,
    /// Party id → behavior.
    #[serde(default)]
    pub byzantine_parties: BTreeMap<u32, PartyBehavior>,
}

impl FaultPlan {
    pub fn member(&self, committee: u32, index: u32) -> Option<MemberBehavior> {
        self.byzantine_members.get(&committee)?.get(&index).copied()
    }

    pub fn party(&self, party: u32) -> Option<PartyBehavior> {
        self.byzantine_parties.get(&party).copied()
    }

    pub fn is_honest_party(&self, party: u32) -> bool {
        !self.byzantine_parties.contains_key(&party)
    }

    pub fn faulty_members(&self, committee: u32) -> usize {
        self.byzantine_members.get(&committee).map_or(0, BTreeMap::len)
    }
}
