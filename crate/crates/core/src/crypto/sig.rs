//! Simulated signatures and quorum certificates.
//!
//! A signature is a keyed tag `H(sk || digest)`. Only the [`KeyRegistry`]
//! (the simulation's PKI) can derive secret keys, and protocol nodes are only
//! ever handed their own [`KeyPair`], so tags cannot be forged inside a run.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::digest::{hash_parts, Canonical, Digest};
use super::CryptoError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CommitteeId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SignerId {
    Party(u32),
    Member(CommitteeId, u32),
}

impl SignerId {
    fn encode(&self, c: &mut Canonical) {
        match *self {
            SignerId::Party(p) => c.u8(0).u32(p),
            SignerId::Member(cid, i) => c.u8(1).u32(cid.0).u32(i),
        };
    }
}

impl fmt::Display for SignerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SignerId::Party(p) => write!(f, "P{p}"),
            SignerId::Member(c, i) => write!(f, "W{}#{}", c.0, i),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature {
    pub signer: SignerId,
    pub digest: Digest,
    pub tag: Digest,
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sig({} on {:?})", self.signer, self.digest)
    }
}

#[derive(Clone, Debug)]
pub struct KeyPair {
    id: SignerId,
    secret: [u8; 32],
}

impl KeyPair {
    pub fn id(&self) -> SignerId {
        self.id
    }

    pub fn sign(&self, digest: Digest) -> Signature {
        Signature {
            signer: self.id,
            digest,
            tag: Digest(hash_parts(&[b"sig", &self.secret, &digest.0])),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyRegistry {
    seed: u64,
}

impl KeyRegistry {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn secret(&self, id: SignerId) -> [u8; 32] {
        let mut c = Canonical::new();
        c.tag("sk").u64(self.seed);
        id.encode(&mut c);
        c.finish().0
    }

    pub fn keypair(&self, id: SignerId) -> KeyPair {
        KeyPair {
            id,
            secret: self.secret(id),
        }
    }

    pub fn verify(&self, sig: &Signature) -> bool {
        let secret = self.secret(sig.signer);
        sig.tag.0 == hash_parts(&[b"sig", &secret, &sig.digest.0])
    }

    pub fn verify_for(&self, sig: &Signature, signer: SignerId, digest: Digest) -> bool {
        sig.signer == signer && sig.digest == digest && self.verify(sig)
    }

    /// Symmetric layer key for onion payloads addressed to `party`.
    pub fn onion_key(&self, party: u32) -> [u8; 32] {
        let mut c = Canonical::new();
        c.tag("onion").u64(self.seed).u32(party);
        c.finish().0
    }

    /// Layer key shared by the members of a committee.
    pub fn committee_onion_key(&self, committee: CommitteeId) -> [u8; 32] {
        let mut c = Canonical::new();
        c.tag("onion-committee").u64(self.seed).u32(committee.0);
        c.finish().0
    }
}

/// `2f + 1` for a committee of `n >= 3f + 1` members.
pub fn quorum(f: usize) -> usize {
    2 * f + 1
}

/// Largest `f` with `n >= 3f + 1`.
pub fn max_faults(n: usize) -> usize {
    n.saturating_sub(1) / 3
}

/// At least `2f + 1` distinct committee signatures over one digest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuorumCertificate {
    pub committee: CommitteeId,
    pub digest: Digest,
    pub signatures: Vec<Signature>,
}

impl QuorumCertificate {
    pub fn assemble<I>(
        committee: CommitteeId,
        committee_size: usize,
        f: usize,
        sigs: I,
        registry: &KeyRegistry,
    ) -> Result<Self, CryptoError>
    where
        I: IntoIterator<Item = Signature>,
    {
        let sigs: Vec<Signature> = sigs.into_iter().collect();
        let digest = match sigs.first() {
            Some(s) => s.digest,
            None => {
                return Err(CryptoError::InsufficientSignatures {
                    have: 0,
                    need: quorum(f),
                })
            }
        };
        let mut seen = BTreeSet::new();
        for s in &sigs {
            if s.digest != digest {
                return Err(CryptoError::DigestMismatch);
            }
            match s.signer {
                SignerId::Member(c, i) if c == committee && (i as usize) < committee_size => {}
                other => return Err(CryptoError::ForeignSigner(other)),
            }
            if !registry.verify(s) {
                return Err(CryptoError::InvalidSignature(s.signer));
            }
            if !seen.insert(s.signer) {
                return Err(CryptoError::DuplicateSigner(s.signer));
            }
        }
        if seen.len() < quorum(f) {
            return Err(CryptoError::InsufficientSignatures {
                have: seen.len(),
                need: quorum(f),
            });
        }
        let mut signatures = sigs;
        signatures.sort_by_key(|s| s.signer);
        Ok(Self {
            committee,
            digest,
            signatures,
        })
    }

    pub fn verify(&self, committee_size: usize, f: usize, registry: &KeyRegistry) -> bool {
        Self::assemble(
            self.committee,
            committee_size,
            f,
            self.signatures.iter().copied(),
            registry,
        )
        .map(|qc| qc.digest == self.digest)
        .unwrap_or(false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn member_sigs(reg: &KeyRegistry, c: u32, idx: &[u32], d: Digest) -> Vec<Signature> {
        idx.iter()
            .map(|&i| reg.keypair(SignerId::Member(CommitteeId(c), i)).sign(d))
            .collect()
    }

    #[test]
    fn sign_verify() {
        let reg = KeyRegistry::new(7);
        let kp = reg.keypair(SignerId::Party(1));
        let d = Digest::of(b"state");
        let s = kp.sign(d);
        assert!(reg.verify(&s));
        assert!(reg.verify_for(&s, SignerId::Party(1), d));
        assert!(!reg.verify_for(&s, SignerId::Party(2), d));
        let mut forged = s;
        forged.signer = SignerId::Party(2);
        assert!(!reg.verify(&forged));
        let mut moved = s;
        moved.digest = Digest::of(b"other");
        assert!(!reg.verify(&moved));
    }

    #[test]
    fn certificate_threshold() {
        let reg = KeyRegistry::new(1);
        let d = Digest::of(b"m");
        let qc = QuorumCertificate::assemble(CommitteeId(0), 4, 1, member_sigs(&reg, 0, &[0, 1, 2], d), &reg).unwrap();
        assert!(qc.verify(4, 1, &reg));
        assert_eq!(
            QuorumCertificate::assemble(CommitteeId(0), 4, 1, member_sigs(&reg, 0, &[0, 1], d), &reg),
            Err(CryptoError::InsufficientSignatures { have: 2, need: 3 })
        );
        assert!(matches!(
            QuorumCertificate::assemble(CommitteeId(0), 4, 1, member_sigs(&reg, 0, &[0, 1, 1], d), &reg),
            Err(CryptoError::DuplicateSigner(_))
        ));
    }

    #[test]
    fn certificate_rejects_mixed_digests_and_foreigners() {
        let reg = KeyRegistry::new(1);
        let d = Digest::of(b"m");
        let mut sigs = member_sigs(&reg, 0, &[0, 1], d);
        sigs.extend(member_sigs(&reg, 0, &[2], Digest::of(b"x")));
        assert_eq!(
            QuorumCertificate::assemble(CommitteeId(0), 4, 1, sigs, &reg),
            Err(CryptoError::DigestMismatch)
        );
        let mut sigs = member_sigs(&reg, 0, &[0, 1], d);
        sigs.extend(member_sigs(&reg, 9, &[2], d));
        assert!(matches!(
            QuorumCertificate::assemble(CommitteeId(0), 4, 1, sigs, &reg),
            Err(CryptoError::ForeignSigner(_))
        ));
    }

    /// With n = 4 and f = 1, any two 3-subsets share at least two members, so
    /// at least one honest member. Honest members sign one digest per slot,
    /// hence two certificates for different digests cannot both exist.
    #[test]
    fn conflicting_certificates_impossible_exhaustive() {
        let reg = KeyRegistry::new(3);
        let (a, b) = (Digest::of(b"a"), Digest::of(b"b"));
        for faulty in 0..4u32 {
            // Honest members commit to one digest each (any split), the faulty
            // one signs both.
            for split in 0u32..8 {
                let mut signed_a = vec![faulty];
                let mut signed_b = vec![faulty];
                let honest: Vec<u32> = (0..4).filter(|&i| i != faulty).collect();
                for (bit, &h) in honest.iter().enumerate() {
                    if split >> bit & 1 == 0 {
                        signed_a.push(h);
                    } else {
                        signed_b.push(h);
                    }
                }
                let qa = QuorumCertificate::assemble(CommitteeId(0), 4, 1, member_sigs(&reg, 0, &signed_a, a), &reg);
                let qb = QuorumCertificate::assemble(CommitteeId(0), 4, 1, member_sigs(&reg, 0, &signed_b, b), &reg);
                assert!(!(qa.is_ok() && qb.is_ok()), "faulty={faulty} split={split}");
            }
        }
    }
}
