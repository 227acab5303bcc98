use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use hmac::{Hmac, Mac};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use super::CryptoError;
use crate::types::Address;

/// What a symmetric key protects. Keys are never used outside their role.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum KeyRole {
    Info,
    Code,
    State,
    Result,
}

impl KeyRole {
    fn tag(self) -> u8 {
        match self {
            KeyRole::Info => 1,
            KeyRole::Code => 2,
            KeyRole::State => 3,
            KeyRole::Result => 4,
        }
    }

    fn from_tag(t: u8) -> Option<Self> {
        Some(match t {
            1 => KeyRole::Info,
            2 => KeyRole::Code,
            3 => KeyRole::State,
            4 => KeyRole::Result,
            _ => return None,
        })
    }
}

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymmetricKey {
    bytes: [u8; 32],
    pub role: KeyRole,
    pub epoch: u64,
}

impl std::fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SymmetricKey({:?}, epoch {})", self.role, self.epoch)
    }
}

impl SymmetricKey {
    /// Fresh key from the caller's deterministic generator.
    pub fn generate<R: RngCore + CryptoRng>(role: KeyRole, epoch: u64, rng: &mut R) -> Self {
        let mut bytes = [0u8; 32];
        rng.fill_bytes(&mut bytes);
        Self { bytes, role, epoch }
    }

    pub fn from_bytes(bytes: [u8; 32], role: KeyRole, epoch: u64) -> Self {
        Self { bytes, role, epoch }
    }

    pub fn bytes(&self) -> &[u8; 32] {
        &self.bytes
    }
}

/// Context every symmetric ciphertext is bound to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssociatedData {
    pub address: Address,
    pub epoch: u64,
    pub role: KeyRole,
}

impl AssociatedData {
    pub fn new(address: Address, epoch: u64, role: KeyRole) -> Self {
        Self { address, epoch, role }
    }

    fn encode(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(29);
        v.extend_from_slice(&self.address.0);
        v.extend_from_slice(&self.epoch.to_be_bytes());
        v.push(self.role.tag());
        v
    }
}

/// `role(1) ‖ epoch(8) ‖ nonce(12) ‖ ciphertext+tag`. Role and epoch are
/// public so a holder knows which key to try.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ciphertext(pub Vec<u8>);

impl std::fmt::Debug for Ciphertext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Ciphertext({} bytes)", self.0.len())
    }
}

const HEADER: usize = 1 + 8 + 12;

impl Ciphertext {
    pub fn role(&self) -> Option<KeyRole> {
        self.0.first().and_then(|t| KeyRole::from_tag(*t))
    }

    pub fn epoch(&self) -> Option<u64> {
        self.0.get(1..9).map(|b| u64::from_be_bytes(b.try_into().unwrap()))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

/// Deterministic authenticated encryption: the nonce is an HMAC of the
/// associated data and plaintext under a subkey, so identical inputs map to
/// identical ciphertexts and replays are byte-stable.
pub fn aead_encrypt(
    key: &SymmetricKey,
    plaintext: &[u8],
    ad: &AssociatedData,
) -> Result<Ciphertext, CryptoError> {
    if ad.role != key.role {
        return Err(CryptoError::RoleMismatch { expected: ad.role, found: key.role });
    }
    let ad_bytes = ad.encode();
    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(&key.bytes).expect("hmac key");
    mac.update(b"racetee/siv");
    mac.update(&ad_bytes);
    mac.update(plaintext);
    let tag = mac.finalize().into_bytes();
    let nonce = Nonce::from_slice(&tag[..12]);
    let cipher = ChaCha20Poly1305::new(Key::from_slice(&key.bytes));
    let body = cipher
        .encrypt(nonce, Payload { msg: plaintext, aad: &ad_bytes })
        .map_err(|_| CryptoError::Malformed)?;
    let mut out = Vec::with_capacity(HEADER + body.len());
    out.push(ad.role.tag());
    out.extend_from_slice(&ad.epoch.to_be_bytes());
    out.extend_from_slice(nonce);
    out.extend_from_slice(&body);
    Ok(Ciphertext(out))
}

pub fn aead_decrypt(
    key: &SymmetricKey,
    ct: &Ciphertext,
    ad: &AssociatedData,
) -> Result<Vec<u8>, CryptoError> {
    if ad.role != key.role {
        return Err(CryptoError::RoleMismatch { expected: ad.role, found: key.role });
    }
    if ct.0.len() < HEADER + 16 {
        return Err(CryptoError::Malformed);
    }
    // the header is informational; it must agree with the bound context
    if ct.role() != Some(ad.role) || ct.epoch() != Some(ad.epoch) {
        return Err(CryptoError::IntegrityViolation);
    }
    let nonce = Nonce::from_slice(&ct.0[9..HEADER]);
    let cipher = ChaCha20Poly1305::new(Key::from_slice(&key.bytes));
    cipher
        .decrypt(nonce, Payload { msg: &ct.0[HEADER..], aad: &ad.encode() })
        .map_err(|_| CryptoError::IntegrityViolation)
}
