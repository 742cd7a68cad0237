//! Lock function, signatures, quorum certificates and onion payloads.

mod digest;
mod lock;
mod onion;
mod sig;

pub use digest::{Canonical, CanonicalEncode, Digest};
pub use lock::{LockCondition, LockFunction, Witness};
pub use onion::{
    build_onion, peel_onion, HopPayload, LockTuple, OnionKey, OnionPacket, HOP_DATA, MAX_HOPS, PACKET_LEN,
};
pub use sig::{max_faults, quorum, CommitteeId, KeyPair, KeyRegistry, QuorumCertificate, Signature, SignerId};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CryptoError {
    #[error("invalid group parameters")]
    InvalidGroup,
    #[error("scalar {scalar} out of range for group order {order}")]
    ScalarOutOfRange { scalar: u64, order: u64 },
    #[error("element is not in the lock group")]
    GroupMismatch,
    #[error("insufficient signatures: have {have}, need {need}")]
    InsufficientSignatures { have: usize, need: usize },
    #[error("duplicate signer {0}")]
    DuplicateSigner(SignerId),
    #[error("signatures over different digests")]
    DigestMismatch,
    #[error("invalid signature from {0}")]
    InvalidSignature(SignerId),
    #[error("signer {0} is not a member of the committee")]
    ForeignSigner(SignerId),
    #[error("path has {path} parties but {payloads} payloads were given")]
    LengthMismatch { path: usize, payloads: usize },
    #[error("missing onion key for party {0}")]
    MissingKey(u32),
    #[error("path of {0} hops exceeds the onion capacity")]
    TooManyHops(usize),
    #[error("onion layer does not authenticate under this key")]
    WrongKey,
    #[error("malformed onion packet")]
    MalformedPacket,
}
