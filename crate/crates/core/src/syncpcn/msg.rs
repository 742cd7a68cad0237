//! Wire messages exchanged by parties and committee members.

use serde::{Deserialize, Serialize};

use crate::channel::ChannelSnapshot;
use crate::crypto::{Canonical, Digest, OnionPacket, Signature, Witness};
use crate::ledger::{ChannelId, FinalState};
use crate::simnet::Traced;

use super::plan::RejectReason;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateKind {
    Lock,
    Pay,
    Revoke,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisputeKind {
    /// Payee presents a witness before the timelock.
    Payee,
    /// Payer asks for expired payments to be removed.
    Payer,
    /// Generic close; pending payments resolve on witnesses or expiry.
    Close,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Msg {
    Propose {
        channel: ChannelId,
        payment_id: u64,
        kind: UpdateKind,
        snapshot: ChannelSnapshot,
        sig: Signature,
        onion: Option<Box<OnionPacket>>,
        witness: Option<Witness>,
    },
    Accept {
        channel: ChannelId,
        kind: UpdateKind,
        version: u64,
        digest: Digest,
        sig: Signature,
    },
    Reject {
        channel: ChannelId,
        payment_id: u64,
        version: u64,
        reason: RejectReason,
    },
    Locked {
        payment_id: u64,
    },
    Reveal {
        payment_id: u64,
        witness: Witness,
    },
    WormholeLeak {
        payment_id: u64,
        witness: Witness,
    },
    Register {
        channel: ChannelId,
        version: u64,
        digest: Digest,
        sigs: (Signature, Signature),
    },
    Ack {
        channel: ChannelId,
        version: u64,
        digest: Digest,
        sig: Signature,
    },
    Dispute {
        channel: ChannelId,
        kind: DisputeKind,
        snapshot: ChannelSnapshot,
        witness: Option<(u64, Witness)>,
    },
    DisputeRefused {
        channel: ChannelId,
        version: u64,
        digest: Digest,
    },
    ClosureNotice {
        channel: ChannelId,
    },
    WitnessRelay {
        channel: ChannelId,
        payment_id: u64,
        witness: Witness,
    },
    ClosureSig {
        state: FinalState,
        sig: Signature,
    },
}

impl Traced for Msg {
    fn label(&self) -> &'static str {
        match self {
            Msg::Propose { kind, .. } => match kind {
                UpdateKind::Lock => "lock-propose",
                UpdateKind::Pay => "claim",
                UpdateKind::Revoke => "revoke-propose",
            },
            Msg::Accept { kind, .. } => match kind {
                UpdateKind::Lock => "lock-accept",
                UpdateKind::Pay => "claim-accept",
                UpdateKind::Revoke => "revoke-accept",
            },
            Msg::Reject { .. } => "reject",
            Msg::Locked { .. } => "locked",
            Msg::Reveal { .. } => "reveal",
            Msg::WormholeLeak { .. } => "wormhole-leak",
            Msg::Register { .. } => "register",
            Msg::Ack { .. } => "ack",
            Msg::Dispute { .. } => "dispute",
            Msg::DisputeRefused { .. } => "dispute-refused",
            Msg::ClosureNotice { .. } => "closure-notice",
            Msg::WitnessRelay { .. } => "witness-relay",
            Msg::ClosureSig { .. } => "closure-sig",
        }
    }

    fn digest(&self) -> Digest {
        let mut c = Canonical::new();
        c.tag(self.label());
        match self {
            Msg::Propose {
                channel,
                payment_id,
                snapshot,
                witness,
                ..
            } => {
                c.u32(channel.0).u64(*payment_id).digest_field(&snapshot.digest());
                c.u64(witness.map_or(u64::MAX, |w| w.0));
            }
            Msg::Accept {
                channel,
                version,
                digest,
                ..
            }
            | Msg::Register {
                channel,
                version,
                digest,
                ..
            }
            | Msg::Ack {
                channel,
                version,
                digest,
                ..
            }
            | Msg::DisputeRefused {
                channel,
                version,
                digest,
            } => {
                c.u32(channel.0).u64(*version).digest_field(digest);
            }
            Msg::Reject {
                channel,
                payment_id,
                version,
                ..
            } => {
                c.u32(channel.0).u64(*payment_id).u64(*version);
            }
            Msg::Locked { payment_id } => {
                c.u64(*payment_id);
            }
            Msg::Reveal { payment_id, witness } | Msg::WormholeLeak { payment_id, witness } => {
                c.u64(*payment_id).u64(witness.0);
            }
            Msg::Dispute {
                channel,
                snapshot,
                witness,
                ..
            } => {
                c.u32(channel.0).digest_field(&snapshot.digest());
                if let Some((id, w)) = witness {
                    c.u64(*id).u64(w.0);
                }
            }
            Msg::ClosureNotice { channel } => {
                c.u32(channel.0);
            }
            Msg::WitnessRelay {
                channel,
                payment_id,
                witness,
            } => {
                c.u32(channel.0).u64(*payment_id).u64(witness.0);
            }
            Msg::ClosureSig { state, .. } => {
                c.digest_field(&state.digest());
            }
        }
        c.finish()
    }
}
