//! Layered, constant-length onion payloads.
//!
//! The construction follows the Sphinx header layout: a fixed-size routing
//! block is XOR-ed with a per-hop keystream and shifted by one hop slot on each
//! peel, with a filler that keeps the block length constant. Layers are keyed
//! with simulated shared symmetric keys and authenticated with a keyed hash.

use serde::{Deserialize, Serialize};

use super::digest::hash_parts;
use super::lock::{LockCondition, Witness};
use super::CryptoError;

pub const HOP_DATA: usize = 64;
pub const MAC_LEN: usize = 32;
pub const HOP_SLOT: usize = HOP_DATA + MAC_LEN;
pub const MAX_HOPS: usize = 20;
pub const ROUTING_LEN: usize = HOP_SLOT * MAX_HOPS;
/// Serialized packet size: recipient hint, nonce, mac, routing block.
pub const PACKET_LEN: usize = 4 + 32 + MAC_LEN + ROUTING_LEN;

pub type OnionKey = [u8; 32];

/// The lock material handed to hop `i`: `(Y_{i-1}, Y_i, ℓ_i)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LockTuple {
    pub prev: LockCondition,
    pub cond: LockCondition,
    pub share: Witness,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HopPayload {
    /// `None` at the payee.
    pub next_party: Option<u32>,
    pub amount: u64,
    pub lock: Option<LockTuple>,
    pub timelock: u64,
    pub payment_id: u64,
}

impl HopPayload {
    pub fn to_bytes(&self) -> [u8; HOP_DATA] {
        let mut out = [0u8; HOP_DATA];
        let mut at = 0;
        let mut put = |bytes: &[u8]| {
            out[at..at + bytes.len()].copy_from_slice(bytes);
            at += bytes.len();
        };
        match self.next_party {
            Some(p) => {
                put(&[1]);
                put(&p.to_be_bytes());
            }
            None => put(&[0, 0, 0, 0, 0]),
        }
        put(&self.amount.to_be_bytes());
        match self.lock {
            Some(l) => {
                put(&[1]);
                put(&l.prev.0.to_be_bytes());
                put(&l.cond.0.to_be_bytes());
                put(&l.share.0.to_be_bytes());
            }
            None => put(&[0; 25]),
        }
        put(&self.timelock.to_be_bytes());
        put(&self.payment_id.to_be_bytes());
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, CryptoError> {
        if b.len() != HOP_DATA {
            return Err(CryptoError::MalformedPacket);
        }
        let u32_at = |i: usize| u32::from_be_bytes(b[i..i + 4].try_into().unwrap());
        let u64_at = |i: usize| u64::from_be_bytes(b[i..i + 8].try_into().unwrap());
        let next_party = match b[0] {
            0 => None,
            1 => Some(u32_at(1)),
            _ => return Err(CryptoError::MalformedPacket),
        };
        let amount = u64_at(5);
        let lock = match b[13] {
            0 => None,
            1 => Some(LockTuple {
                prev: LockCondition(u64_at(14)),
                cond: LockCondition(u64_at(22)),
                share: Witness(u64_at(30)),
            }),
            _ => return Err(CryptoError::MalformedPacket),
        };
        if b[54..].iter().any(|&x| x != 0) {
            return Err(CryptoError::MalformedPacket);
        }
        Ok(Self {
            next_party,
            amount,
            lock,
            timelock: u64_at(38),
            payment_id: u64_at(46),
        })
    }
}

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OnionPacket {
    pub recipient_hint: u32,
    nonce: [u8; 32],
    mac: [u8; MAC_LEN],
    routing: Vec<u8>,
}

impl std::fmt::Debug for OnionPacket {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Onion(to P{}, mac {:02x}{:02x}..)",
            self.recipient_hint, self.mac[0], self.mac[1]
        )
    }
}

fn keystream(key: &OnionKey, nonce: &[u8; 32], len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(len + 32);
    let mut ctr = 0u32;
    while out.len() < len {
        out.extend_from_slice(&hash_parts(&[b"stream", key, nonce, &ctr.to_be_bytes()]));
        ctr += 1;
    }
    out.truncate(len);
    out
}

fn layer_mac(key: &OnionKey, nonce: &[u8; 32], routing: &[u8]) -> [u8; MAC_LEN] {
    hash_parts(&[b"mac", key, nonce, routing])
}

fn blind(key: &OnionKey, nonce: &[u8; 32]) -> [u8; 32] {
    hash_parts(&[b"blind", key, nonce])
}

fn xor_into(dst: &mut [u8], src: &[u8]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d ^= s;
    }
}

/// Builds the packet for `path[1]`. `path[0]` is the sender; `payloads[i]` and
/// `keys[i]` belong to `path[i + 1]`.
pub fn build_onion(path: &[u32], payloads: &[HopPayload], keys: &[OnionKey]) -> Result<OnionPacket, CryptoError> {
    let hops = payloads.len();
    if path.len() != hops + 1 || hops == 0 {
        return Err(CryptoError::LengthMismatch {
            path: path.len(),
            payloads: hops,
        });
    }
    if keys.len() != hops {
        return Err(CryptoError::MissingKey(path[keys.len().min(hops) + 1]));
    }
    if hops > MAX_HOPS {
        return Err(CryptoError::TooManyHops(hops));
    }
    const L: usize = ROUTING_LEN;
    const H: usize = HOP_SLOT;

    let mut seed_parts: Vec<&[u8]> = vec![b"onion-nonce"];
    let encoded: Vec<[u8; HOP_DATA]> = payloads.iter().map(HopPayload::to_bytes).collect();
    for (e, k) in encoded.iter().zip(keys) {
        seed_parts.push(e);
        seed_parts.push(k);
    }
    let mut nonces = vec![hash_parts(&seed_parts)];
    for i in 0..hops - 1 {
        let next = blind(&keys[i], &nonces[i]);
        nonces.push(next);
    }
    let streams: Vec<Vec<u8>> = (0..hops).map(|i| keystream(&keys[i], &nonces[i], L + H)).collect();

    let mut filler: Vec<u8> = Vec::new();
    for (j, s) in streams.iter().enumerate().take(hops - 1) {
        filler.extend_from_slice(&[0u8; H]);
        xor_into(&mut filler, &s[L - j * H..L + H]);
    }

    let last = hops - 1;
    let mut routing = vec![0u8; L];
    routing[..HOP_DATA].copy_from_slice(&encoded[last]);
    xor_into(&mut routing, &streams[last][..L]);
    routing[L - filler.len()..].copy_from_slice(&filler);
    let mut mac = layer_mac(&keys[last], &nonces[last], &routing);

    for i in (0..last).rev() {
        let mut r = Vec::with_capacity(L);
        r.extend_from_slice(&encoded[i]);
        r.extend_from_slice(&mac);
        r.extend_from_slice(&routing[..L - H]);
        xor_into(&mut r, &streams[i][..L]);
        mac = layer_mac(&keys[i], &nonces[i], &r);
        routing = r;
    }

    Ok(OnionPacket {
        recipient_hint: path[1],
        nonce: nonces[0],
        mac,
        routing,
    })
}

/// Removes one layer. The returned packet is terminal when the payload has no
/// next party.
pub fn peel_onion(packet: &OnionPacket, key: &OnionKey) -> Result<(HopPayload, OnionPacket), CryptoError> {
    if packet.routing.len() != ROUTING_LEN {
        return Err(CryptoError::MalformedPacket);
    }
    if layer_mac(key, &packet.nonce, &packet.routing) != packet.mac {
        return Err(CryptoError::WrongKey);
    }
    let mut ext = packet.routing.clone();
    ext.extend_from_slice(&[0u8; HOP_SLOT]);
    xor_into(&mut ext, &keystream(key, &packet.nonce, ROUTING_LEN + HOP_SLOT));
    let payload = HopPayload::from_bytes(&ext[..HOP_DATA])?;
    let mac: [u8; MAC_LEN] = ext[HOP_DATA..HOP_SLOT].try_into().unwrap();
    let next = OnionPacket {
        recipient_hint: payload.next_party.unwrap_or(packet.recipient_hint),
        nonce: blind(key, &packet.nonce),
        mac,
        routing: ext[HOP_SLOT..].to_vec(),
    };
    Ok((payload, next))
}

impl OnionPacket {
    /// A packet past the last hop carries an all-zero MAC.
    pub fn is_terminal(&self) -> bool {
        self.mac.iter().all(|&b| b == 0)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(PACKET_LEN);
        out.extend_from_slice(&self.recipient_hint.to_be_bytes());
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.mac);
        out.extend_from_slice(&self.routing);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, CryptoError> {
        if b.len() != PACKET_LEN {
            return Err(CryptoError::MalformedPacket);
        }
        Ok(Self {
            recipient_hint: u32::from_be_bytes(b[..4].try_into().unwrap()),
            nonce: b[4..36].try_into().unwrap(),
            mac: b[36..68].try_into().unwrap(),
            routing: b[68..].to_vec(),
        })
    }
}
