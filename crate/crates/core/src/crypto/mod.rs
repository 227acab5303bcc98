//! Cryptographic suite: hashing, node signatures, context-bound symmetric
//! encryption and hybrid public-key encryption, plus the protocol key types.
//!
//! Concrete algorithms: SHA-256, Ed25519, ChaCha20-Poly1305 with a synthetic
//! (HMAC-derived) nonce, and X25519 + HKDF-SHA256 + ChaCha20-Poly1305 for
//! sealed boxes. Everything else in the crate goes through the functions
//! re-exported here, so swapping an algorithm is local to this module.

mod aead;
mod pke;
mod sig;

use std::fmt;

use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::types::hex_bytes_serde;

pub use aead::{aead_decrypt, aead_encrypt, AssociatedData, Ciphertext, KeyRole, SymmetricKey};
pub use pke::{
    pk_decrypt, pk_encrypt, seal_to, unseal_with, RequestKeyPair, RequestPublicKey, SealedBox,
};
pub use sig::{sign, verify, NodeKeyPair, NodePublicKey, Signature, SigningKeyPair, VerifyingKey};

pub const DIGEST_LEN: usize = 32;

/// SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

hex_bytes_serde!(Digest, 32);

impl Digest {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("malformed key material")]
    KeyFormat,
    #[error("integrity violation: authentication failed")]
    IntegrityViolation,
    #[error("key role mismatch: expected {expected:?}, got {found:?}")]
    RoleMismatch { expected: KeyRole, found: KeyRole },
    #[error("key epoch mismatch: ciphertext epoch {ciphertext}, key epoch {key}")]
    EpochMismatch { ciphertext: u64, key: u64 },
    #[error("malformed ciphertext")]
    Malformed,
}

pub fn hash(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// Hash of several fields with length framing, so `["ab","c"]` and
/// `["a","bc"]` never collide.
pub fn hash_parts(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_be_bytes());
        h.update(p);
    }
    Digest(h.finalize().into())
}

/// Fresh symmetric key for `role` at `epoch`, drawn from the enclave's seeded
/// generator.
pub fn derive_fresh_key<R: rand::RngCore + rand::CryptoRng>(
    role: KeyRole,
    epoch: u64,
    rng: &mut R,
) -> SymmetricKey {
    SymmetricKey::generate(role, epoch, rng)
}

impl fmt::LowerHex for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;
    use rand::RngCore;

    #[test]
    fn empty_digest_is_stable() {
        assert_eq!(
            hash(b"").to_string(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn hash_is_deterministic_and_bit_sensitive() {
        let mut rng = DetRng::from_u64(11);
        for _ in 0..1000 {
            let len = 1 + rng.below(64) as usize;
            let mut x = vec![0u8; len];
            rng.fill_bytes(&mut x);
            assert_eq!(hash(&x), hash(&x));
            let bit = rng.below(len as u64 * 8) as usize;
            let mut y = x.clone();
            y[bit / 8] ^= 1 << (bit % 8);
            assert_ne!(hash(&x), hash(&y));
        }
    }

    #[test]
    fn fresh_keys_never_collide() {
        let mut rng = DetRng::from_u64(12);
        let mut seen = std::collections::HashSet::new();
        for i in 0..10_000u64 {
            let k = derive_fresh_key(KeyRole::State, i % 7, &mut rng);
            assert!(seen.insert(*k.bytes()));
        }
    }

    #[test]
    fn fresh_keys_replay_from_seed() {
        let a = derive_fresh_key(KeyRole::Info, 0, &mut DetRng::from_u64(4));
        let b = derive_fresh_key(KeyRole::Info, 0, &mut DetRng::from_u64(4));
        let mut r = DetRng::from_u64(4);
        let _ = derive_fresh_key(KeyRole::Info, 0, &mut r);
        let c = derive_fresh_key(KeyRole::Info, 0, &mut r);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn framing_separates_boundaries() {
        assert_ne!(hash_parts(&[b"ab", b"c"]), hash_parts(&[b"a", b"bc"]));
    }
}
