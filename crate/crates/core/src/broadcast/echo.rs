//! Signed-echo consistent broadcast.
//!
//! The sender hands its payload digest to every member; each member signs at
//! most one digest per instance and returns the signature. `2f + 1` matching
//! echoes form a delivery certificate, which members accept in place of the
//! payload's authenticity.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::crypto::{Canonical, CommitteeId, Digest, KeyPair, KeyRegistry, QuorumCertificate, Signature, SignerId};
use crate::simnet::MemberBehavior;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InstanceId {
    pub sender: SignerId,
    pub seq: u64,
}

pub fn echo_digest(committee: CommitteeId, instance: InstanceId, payload: Digest) -> Digest {
    let mut c = Canonical::new();
    c.tag("echo").u32(committee.0).u64(instance.seq);
    match instance.sender {
        SignerId::Party(p) => c.u8(0).u32(p),
        SignerId::Member(k, i) => c.u8(1).u32(k.0).u32(i),
    };
    c.digest_field(&payload).finish()
}

pub struct EchoMember {
    committee: CommitteeId,
    n: usize,
    f: usize,
    key: KeyPair,
    behavior: Option<MemberBehavior>,
    echoed: BTreeMap<InstanceId, Digest>,
    delivered: BTreeMap<InstanceId, Digest>,
}

impl EchoMember {
    pub fn new(
        committee: CommitteeId,
        n: usize,
        f: usize,
        index: u32,
        registry: &KeyRegistry,
        behavior: Option<MemberBehavior>,
    ) -> Self {
        Self {
            committee,
            n,
            f,
            key: registry.keypair(SignerId::Member(committee, index)),
            behavior,
            echoed: BTreeMap::new(),
            delivered: BTreeMap::new(),
        }
    }

    /// The echo for `payload`, or `None` if this member already echoed a
    /// different payload for the instance.
    pub fn on_send(&mut self, instance: InstanceId, payload: Digest) -> Option<Signature> {
        let d = echo_digest(self.committee, instance, payload);
        match self.behavior {
            Some(MemberBehavior::Silent) | Some(MemberBehavior::WithholdAcks) => None,
            Some(MemberBehavior::SignAnything) => Some(self.key.sign(d)),
            _ => match self.echoed.get(&instance) {
                Some(prev) if *prev != payload => None,
                _ => {
                    self.echoed.insert(instance, payload);
                    Some(self.key.sign(d))
                }
            },
        }
    }

    /// Delivers on a valid certificate; first delivery per instance wins.
    pub fn on_final(
        &mut self,
        instance: InstanceId,
        payload: Digest,
        cert: &QuorumCertificate,
        registry: &KeyRegistry,
    ) -> Option<Digest> {
        if cert.committee != self.committee
            || cert.digest != echo_digest(self.committee, instance, payload)
            || !cert.verify(self.n, self.f, registry)
        {
            return None;
        }
        Some(*self.delivered.entry(instance).or_insert(payload))
    }

    pub fn delivered(&self, instance: InstanceId) -> Option<Digest> {
        self.delivered.get(&instance).copied()
    }
}

/// Sender side: collect echoes until a certificate forms.
pub struct EchoCollector {
    committee: CommitteeId,
    n: usize,
    f: usize,
    instance: InstanceId,
    payload: Digest,
    echoes: BTreeMap<SignerId, Signature>,
}

impl EchoCollector {
    pub fn new(committee: CommitteeId, n: usize, f: usize, instance: InstanceId, payload: Digest) -> Self {
        Self {
            committee,
            n,
            f,
            instance,
            payload,
            echoes: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, sig: Signature, registry: &KeyRegistry) -> Option<QuorumCertificate> {
        if sig.digest != echo_digest(self.committee, self.instance, self.payload) || !registry.verify(&sig) {
            return None;
        }
        self.echoes.insert(sig.signer, sig);
        QuorumCertificate::assemble(self.committee, self.n, self.f, self.echoes.values().copied(), registry).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const C: CommitteeId = CommitteeId(0);

    fn members(reg: &KeyRegistry, faulty: Option<(u32, MemberBehavior)>) -> Vec<EchoMember> {
        (0..4)
            .map(|i| {
                let b = faulty.and_then(|(j, b)| (i == j).then_some(b));
                EchoMember::new(C, 4, 1, i, reg, b)
            })
            .collect()
    }

    #[test]
    fn honest_sender_all_deliver() {
        let reg = KeyRegistry::new(1);
        let inst = InstanceId {
            sender: SignerId::Party(0),
            seq: 0,
        };
        let d = Digest::of(b"m");
        let mut ms = members(&reg, Some((2, MemberBehavior::WithholdAcks)));
        let mut col = EchoCollector::new(C, 4, 1, inst, d);
        let mut cert = None;
        for m in ms.iter_mut() {
            if let Some(s) = m.on_send(inst, d) {
                cert = cert.or(col.add(s, &reg));
            }
        }
        let cert = cert.expect("three echoes suffice");
        for m in ms.iter_mut() {
            assert_eq!(m.on_final(inst, d, &cert, &reg), Some(d));
        }
    }

    /// Sender splits the committee between two payloads; one member may be
    /// Byzantine and echo both. Every subset split and every faulty choice is
    /// enumerated; honest members never deliver different payloads.
    #[test]
    fn equivocation_exhaustive() {
        let reg = KeyRegistry::new(2);
        let inst = InstanceId {
            sender: SignerId::Party(9),
            seq: 3,
        };
        let (a, b) = (Digest::of(b"a"), Digest::of(b"b"));
        for faulty in [None, Some(0), Some(1), Some(2), Some(3)] {
            for split in 0u32..16 {
                let mut ms = members(&reg, faulty.map(|f| (f, MemberBehavior::SignAnything)));
                let mut ca = EchoCollector::new(C, 4, 1, inst, a);
                let mut cb = EchoCollector::new(C, 4, 1, inst, b);
                let (mut qa, mut qb) = (None, None);
                for (i, m) in ms.iter_mut().enumerate() {
                    let to_a = split >> i & 1 == 0;
                    let byz = faulty == Some(i as u32);
                    if to_a || byz {
                        if let Some(s) = m.on_send(inst, a) {
                            qa = qa.or(ca.add(s, &reg));
                        }
                    }
                    if !to_a || byz {
                        if let Some(s) = m.on_send(inst, b) {
                            qb = qb.or(cb.add(s, &reg));
                        }
                    }
                }
                assert!(qa.is_none() || qb.is_none(), "faulty={faulty:?} split={split:04b}");
                // Deliver every certificate that exists to every member in both orders.
                for order in [[0, 1], [1, 0]] {
                    let mut ms2 = members(&reg, None);
                    let mut got = vec![];
                    for m in ms2.iter_mut() {
                        for &o in &order {
                            let (q, d) = if o == 0 { (&qa, a) } else { (&qb, b) };
                            if let Some(q) = q {
                                m.on_final(inst, d, q, &reg);
                            }
                        }
                        got.push(m.delivered(inst));
                    }
                    let delivered: Vec<_> = got.into_iter().flatten().collect();
                    assert!(delivered.windows(2).all(|w| w[0] == w[1]));
                }
            }
        }
    }
}
