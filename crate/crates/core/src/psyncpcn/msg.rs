//! Messages exchanged by parties and committees.

use serde::Serialize;

use crate::broadcast::{OrderMsg, Payload};
use crate::crypto::{Canonical, Digest, OnionPacket, Signature};
use crate::ledger::{ChannelId, FinalState};
use crate::simnet::Traced;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Kind {
    Pay,
    Success,
    Reject,
}

impl Kind {
    fn code(self) -> u8 {
        match self {
            Kind::Pay => 0,
            Kind::Success => 1,
            Kind::Reject => 2,
        }
    }
}

/// Who numbered a payment. Ids are only unique per source.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Source {
    /// Simplified mode: the sender and the first hop, fixed along the path.
    Origin(u32, u32),
    /// Full mode: a sender's own counter.
    Party(u32),
    /// Full mode: the relabeling committee's counter.
    Committee(u32),
}

impl Source {
    fn encode(&self, c: &mut Canonical) {
        match *self {
            Source::Origin(a, b) => c.u8(0).u32(a).u32(b),
            Source::Party(p) => c.u8(1).u32(p),
            Source::Committee(w) => c.u8(2).u32(w),
        };
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Route {
    /// The full path, as in the simplified pseudocode.
    Path(Vec<u32>),
    /// Layered route; each committee learns only the next party.
    Onion(Box<OnionPacket>),
    /// Backward messages in full mode, identified by `(source, id)` alone.
    Handle,
}

/// `(kind, Id, v, route)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaymentMsg {
    pub kind: Kind,
    pub source: Source,
    pub id: u64,
    pub amount: u64,
    pub route: Route,
}

impl PaymentMsg {
    pub fn digest(&self) -> Digest {
        let mut c = Canonical::new();
        c.tag("psync-payment").u8(self.kind.code());
        self.source.encode(&mut c);
        c.u64(self.id).u64(self.amount);
        match &self.route {
            Route::Path(p) => {
                c.u8(0).u64(p.len() as u64);
                for &x in p {
                    c.u32(x);
                }
            }
            Route::Onion(o) => {
                c.u8(1).bytes(&o.to_bytes());
            }
            Route::Handle => {
                c.u8(2);
            }
        }
        c.finish()
    }

    /// The same payment seen as a backward message.
    pub fn reply(&self, kind: Kind) -> PaymentMsg {
        let route = match &self.route {
            Route::Path(p) => Route::Path(p.clone()),
            _ => Route::Handle,
        };
        PaymentMsg {
            kind,
            source: self.source,
            id: self.id,
            amount: self.amount,
            route,
        }
    }
}

/// An entry a committee totally orders.
#[derive(Clone, Debug, PartialEq)]
pub enum Entry {
    /// `proof` holds the sender's signature or `f + 1` signatures of the
    /// members of committee `from`.
    Msg {
        msg: PaymentMsg,
        from: Option<u32>,
        proof: Vec<Signature>,
    },
    Close {
        party: u32,
        sig: Signature,
    },
}

impl Payload for Entry {
    /// Proofs are left out so that copies reaching different members dedupe.
    fn digest(&self) -> Digest {
        match self {
            Entry::Msg { msg, from, .. } => {
                let mut c = Canonical::new();
                c.tag("psync-entry").digest_field(&msg.digest());
                match from {
                    Some(w) => c.u8(1).u32(*w),
                    None => c.u8(0),
                };
                c.finish()
            }
            Entry::Close { party, .. } => Canonical::new().tag("psync-close").u32(*party).finish(),
        }
    }
}

/// What members tell parties about their channel.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Notice {
    Locked {
        source: Source,
        id: u64,
        payer: u32,
        amount: u64,
    },
    /// Completion or unlock, with the channel balances after it.
    Done {
        kind: Kind,
        source: Source,
        id: u64,
        payer: u32,
        amount: u64,
        balances: (u64, u64),
    },
}

impl Notice {
    pub fn key(&self) -> (Source, u64) {
        match *self {
            Notice::Locked { source, id, .. } | Notice::Done { source, id, .. } => (source, id),
        }
    }

    pub fn digest(&self, channel: ChannelId) -> Digest {
        let mut c = Canonical::new();
        c.tag("psync-notice").u32(channel.0);
        match self {
            Notice::Locked {
                source,
                id,
                payer,
                amount,
            } => {
                c.u8(0);
                source.encode(&mut c);
                c.u64(*id).u32(*payer).u64(*amount);
            }
            Notice::Done {
                kind,
                source,
                id,
                payer,
                amount,
                balances,
            } => {
                c.u8(1).u8(kind.code());
                source.encode(&mut c);
                c.u64(*id).u32(*payer).u64(*amount).u64(balances.0).u64(balances.1);
            }
        }
        c.finish()
    }
}

pub fn close_digest(channel: ChannelId, party: u32) -> Digest {
    Canonical::new()
        .tag("psync-close-request")
        .u32(channel.0)
        .u32(party)
        .finish()
}

#[derive(Clone, Debug, PartialEq)]
pub enum PMsg {
    /// Party to the members of its first committee.
    Request {
        msg: PaymentMsg,
        sig: Signature,
    },
    /// Member to the members of an adjacent committee.
    Transfer {
        from: u32,
        msg: PaymentMsg,
        sig: Signature,
    },
    Order(OrderMsg<Entry>),
    Notify {
        channel: ChannelId,
        notice: Notice,
        sig: Signature,
    },
    CloseRequest {
        channel: ChannelId,
        sig: Signature,
    },
    ClosureSig {
        state: FinalState,
        sig: Signature,
    },
}

impl Traced for PMsg {
    fn label(&self) -> &'static str {
        match self {
            PMsg::Request { .. } => "pay-request",
            PMsg::Transfer { msg, .. } => match msg.kind {
                Kind::Pay => "committee-pay",
                Kind::Success => "committee-success",
                Kind::Reject => "committee-reject",
            },
            PMsg::Order(m) => m.label(),
            PMsg::Notify { .. } => "notify",
            PMsg::CloseRequest { .. } => "close-request",
            PMsg::ClosureSig { .. } => "closure-sig",
        }
    }

    fn digest(&self) -> Digest {
        match self {
            PMsg::Request { msg, .. } | PMsg::Transfer { msg, .. } => msg.digest(),
            PMsg::Order(m) => Traced::digest(m),
            PMsg::Notify { channel, notice, .. } => notice.digest(*channel),
            PMsg::CloseRequest { sig, .. } => sig.digest,
            PMsg::ClosureSig { state, .. } => state.digest(),
        }
    }
}
