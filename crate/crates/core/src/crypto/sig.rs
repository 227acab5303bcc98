use ed25519_dalek::{Signer, Verifier};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use x25519_dalek::StaticSecret;

use super::pke::BoxPublicKey;
use super::CryptoError;
use crate::types::hex_bytes_serde;

/// Ed25519 public key bytes.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VerifyingKey(pub [u8; 32]);

hex_bytes_serde!(VerifyingKey, 32);

#[derive(Clone, PartialEq, Eq)]
pub struct Signature(pub [u8; 64]);

impl std::fmt::Debug for Signature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Signature({}..)", &hex::encode(&self.0[..4]))
    }
}

impl Serialize for Signature {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if s.is_human_readable() {
            s.serialize_str(&hex::encode(self.0))
        } else {
            self.0.to_vec().serialize(s)
        }
    }
}

impl<'de> Deserialize<'de> for Signature {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = if d.is_human_readable() {
            hex::decode(String::deserialize(d)?).map_err(serde::de::Error::custom)?
        } else {
            Vec::<u8>::deserialize(d)?
        };
        let arr: [u8; 64] =
            v.try_into().map_err(|_| serde::de::Error::custom("expected 64 signature bytes"))?;
        Ok(Signature(arr))
    }
}

/// An Ed25519 signing key. Used for account keys (transaction senders) and
/// as the signing half of enclave identities.
#[derive(Clone)]
pub struct SigningKeyPair {
    sk: ed25519_dalek::SigningKey,
}

impl SigningKeyPair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Self { sk: ed25519_dalek::SigningKey::generate(rng) }
    }

    pub fn from_secret_bytes(bytes: &[u8; 32]) -> Self {
        Self { sk: ed25519_dalek::SigningKey::from_bytes(bytes) }
    }

    pub fn secret_bytes(&self) -> [u8; 32] {
        self.sk.to_bytes()
    }

    pub fn public(&self) -> VerifyingKey {
        VerifyingKey(self.sk.verifying_key().to_bytes())
    }
}

/// Public identity of an enclave: a signature key and a box (encryption) key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodePublicKey {
    pub verify: VerifyingKey,
    pub encrypt: BoxPublicKey,
}

/// Enclave identity key pair. The private halves never leave the enclave.
#[derive(Clone)]
pub struct NodeKeyPair {
    pub signing: SigningKeyPair,
    encryption: StaticSecret,
}

impl NodeKeyPair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let signing = SigningKeyPair::generate(rng);
        let mut b = [0u8; 32];
        rng.fill_bytes(&mut b);
        Self { signing, encryption: StaticSecret::from(b) }
    }

    pub fn public(&self) -> NodePublicKey {
        NodePublicKey {
            verify: self.signing.public(),
            encrypt: BoxPublicKey(x25519_dalek::PublicKey::from(&self.encryption).to_bytes()),
        }
    }

    pub(crate) fn box_secret(&self) -> &StaticSecret {
        &self.encryption
    }

    /// Raw private material, for taint registration in tests and sealing.
    pub fn secret_material(&self) -> Vec<[u8; 32]> {
        vec![self.signing.secret_bytes(), self.encryption.to_bytes()]
    }
}

pub fn sign(key: &SigningKeyPair, msg: &[u8]) -> Signature {
    Signature(key.sk.sign(msg).to_bytes())
}

/// `Ok(false)` for a well-formed key that does not verify; `Err(KeyFormat)`
/// when the public key bytes are not a valid curve point.
pub fn verify(key: &VerifyingKey, msg: &[u8], sig: &Signature) -> Result<bool, CryptoError> {
    let vk = ed25519_dalek::VerifyingKey::from_bytes(&key.0).map_err(|_| CryptoError::KeyFormat)?;
    let sig = ed25519_dalek::Signature::from_bytes(&sig.0);
    Ok(vk.verify(msg, &sig).is_ok())
}
