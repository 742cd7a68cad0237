//! Additively homomorphic one-way lock function.
//!
//! Instantiated as `x -> g^x mod p` in a cyclic subgroup of known order, so
//! that `apply(a) * apply(b) = apply(a + b mod order)`. Both bundled groups
//! are simulation-scale: the 23-element toy group exists for hand-checkable
//! oracles and the 62-bit safe-prime subgroup is the default for runs. Neither
//! is meant to resist a real discrete-log attacker.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::CryptoError;

/// Scalar in `[0, order)`; also the witness type for a lock.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Witness(pub u64);

/// Image of a scalar under the lock function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LockCondition(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LockFunction {
    modulus: u64,
    order: u64,
    generator: u64,
}

const SAFE_PRIME: u64 = 4_611_686_018_427_377_339;
const SAFE_PRIME_Q: u64 = 2_305_843_009_213_688_669;

fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn pow_mod(mut base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1 % m;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, m);
        }
        base = mul_mod(base, base, m);
        exp >>= 1;
    }
    acc
}

impl LockFunction {
    /// Checks that `generator` has order dividing `order` and is not the identity.
    pub fn new(modulus: u64, order: u64, generator: u64) -> Result<Self, CryptoError> {
        if modulus < 3 || order < 2 || generator <= 1 || generator >= modulus {
            return Err(CryptoError::InvalidGroup);
        }
        if pow_mod(generator, order, modulus) != 1 {
            return Err(CryptoError::InvalidGroup);
        }
        Ok(Self {
            modulus,
            order,
            generator,
        })
    }

    /// `Z_23^*` generated by 5 (order 22).
    pub fn toy() -> Self {
        Self::new(23, 22, 5).expect("toy group is valid")
    }

    /// Prime-order subgroup of `Z_p^*` for the 62-bit safe prime `p = 2q + 1`.
    pub fn simulation_default() -> Self {
        Self::new(SAFE_PRIME, SAFE_PRIME_Q, 4).expect("default group is valid")
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    pub fn order(&self) -> u64 {
        self.order
    }

    pub fn generator(&self) -> u64 {
        self.generator
    }

    pub fn apply(&self, x: Witness) -> Result<LockCondition, CryptoError> {
        if x.0 >= self.order {
            return Err(CryptoError::ScalarOutOfRange {
                scalar: x.0,
                order: self.order,
            });
        }
        Ok(LockCondition(pow_mod(self.generator, x.0, self.modulus)))
    }

    pub fn identity(&self) -> LockCondition {
        LockCondition(1)
    }

    pub fn contains(&self, c: LockCondition) -> bool {
        c.0 != 0 && c.0 < self.modulus && pow_mod(c.0, self.order, self.modulus) == 1
    }

    /// Group operation on images.
    pub fn combine(&self, a: LockCondition, b: LockCondition) -> Result<LockCondition, CryptoError> {
        if !self.contains(a) || !self.contains(b) {
            return Err(CryptoError::GroupMismatch);
        }
        Ok(LockCondition(mul_mod(a.0, b.0, self.modulus)))
    }

    pub fn add(&self, a: Witness, b: Witness) -> Witness {
        Witness(((a.0 as u128 + b.0 as u128) % self.order as u128) as u64)
    }

    pub fn sub(&self, a: Witness, b: Witness) -> Witness {
        let o = self.order as u128;
        Witness(((a.0 as u128 + o - (b.0 as u128 % o)) % o) as u64)
    }

    pub fn random_scalar<R: Rng + ?Sized>(&self, rng: &mut R) -> Witness {
        Witness(rng.gen_range(0..self.order))
    }

    /// `apply(w) == cond`.
    pub fn verify(&self, w: Witness, cond: LockCondition) -> bool {
        matches!(self.apply(w), Ok(c) if c == cond)
    }
}
