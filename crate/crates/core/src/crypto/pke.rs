use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use hkdf::Hkdf;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use x25519_dalek::{PublicKey, StaticSecret};

use super::CryptoError;
use crate::types::hex_bytes_serde;

/// X25519 public key bytes.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BoxPublicKey(pub [u8; 32]);

hex_bytes_serde!(BoxPublicKey, 32);

/// Public half of the shared request-encryption key pair, tagged with its
/// rotation epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestPublicKey {
    pub key: BoxPublicKey,
    pub epoch: u64,
}

/// The shared request key pair. Lives only inside enclaves.
#[derive(Clone)]
pub struct RequestKeyPair {
    secret: StaticSecret,
    pub epoch: u64,
}

impl std::fmt::Debug for RequestKeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RequestKeyPair(epoch {})", self.epoch)
    }
}

impl RequestKeyPair {
    pub fn generate<R: RngCore + CryptoRng>(epoch: u64, rng: &mut R) -> Self {
        let mut b = [0u8; 32];
        rng.fill_bytes(&mut b);
        Self { secret: StaticSecret::from(b), epoch }
    }

    pub fn from_secret_bytes(bytes: [u8; 32], epoch: u64) -> Self {
        Self { secret: StaticSecret::from(bytes), epoch }
    }

    pub fn secret_bytes(&self) -> [u8; 32] {
        self.secret.to_bytes()
    }

    pub fn public(&self) -> RequestPublicKey {
        RequestPublicKey { key: BoxPublicKey(PublicKey::from(&self.secret).to_bytes()), epoch: self.epoch }
    }
}

/// Hybrid ciphertext: ephemeral X25519 key plus ChaCha20-Poly1305 body.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SealedBox {
    pub epoch: u64,
    pub ephemeral: BoxPublicKey,
    pub body: Vec<u8>,
}

impl std::fmt::Debug for SealedBox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SealedBox(epoch {}, {} bytes)", self.epoch, self.body.len())
    }
}

fn box_key(shared: &[u8; 32], eph: &[u8; 32], recipient: &[u8; 32], label: &[u8], epoch: u64) -> [u8; 32] {
    let mut salt = Vec::with_capacity(64);
    salt.extend_from_slice(eph);
    salt.extend_from_slice(recipient);
    let hk = Hkdf::<Sha256>::new(Some(&salt), shared);
    let mut info = label.to_vec();
    info.extend_from_slice(&epoch.to_be_bytes());
    let mut okm = [0u8; 32];
    hk.expand(&info, &mut okm).expect("32-byte okm");
    okm
}

/// Encrypts `plaintext` to an X25519 recipient. `label` domain-separates
/// uses (requests vs. peer key envelopes).
pub fn seal_to<R: RngCore + CryptoRng>(
    recipient: &BoxPublicKey,
    label: &[u8],
    epoch: u64,
    plaintext: &[u8],
    rng: &mut R,
) -> SealedBox {
    let mut b = [0u8; 32];
    rng.fill_bytes(&mut b);
    let eph = StaticSecret::from(b);
    let eph_pub = PublicKey::from(&eph).to_bytes();
    let shared = eph.diffie_hellman(&PublicKey::from(recipient.0)).to_bytes();
    let k = box_key(&shared, &eph_pub, &recipient.0, label, epoch);
    let cipher = ChaCha20Poly1305::new(Key::from_slice(&k));
    // each box has a fresh ephemeral key, so a fixed nonce is never reused
    let body = cipher
        .encrypt(Nonce::from_slice(&[0u8; 12]), Payload { msg: plaintext, aad: label })
        .expect("encrypt");
    SealedBox { epoch, ephemeral: BoxPublicKey(eph_pub), body }
}

pub fn unseal_with(
    secret: &StaticSecret,
    label: &[u8],
    epoch: u64,
    sealed: &SealedBox,
) -> Result<Vec<u8>, CryptoError> {
    if sealed.epoch != epoch {
        return Err(CryptoError::EpochMismatch { ciphertext: sealed.epoch, key: epoch });
    }
    let recipient = PublicKey::from(secret).to_bytes();
    let shared = secret.diffie_hellman(&PublicKey::from(sealed.ephemeral.0)).to_bytes();
    let k = box_key(&shared, &sealed.ephemeral.0, &recipient, label, epoch);
    let cipher = ChaCha20Poly1305::new(Key::from_slice(&k));
    cipher
        .decrypt(Nonce::from_slice(&[0u8; 12]), Payload { msg: &sealed.body, aad: label })
        .map_err(|_| CryptoError::IntegrityViolation)
}

const REQUEST_LABEL: &[u8] = b"racetee/request";

pub fn pk_encrypt<R: RngCore + CryptoRng>(
    key: &RequestPublicKey,
    plaintext: &[u8],
    rng: &mut R,
) -> SealedBox {
    seal_to(&key.key, REQUEST_LABEL, key.epoch, plaintext, rng)
}

pub fn pk_decrypt(key: &RequestKeyPair, sealed: &SealedBox) -> Result<Vec<u8>, CryptoError> {
    unseal_with(&key.secret, REQUEST_LABEL, key.epoch, sealed)
}

impl super::NodeKeyPair {
    pub fn unseal(&self, label: &[u8], sealed: &SealedBox) -> Result<Vec<u8>, CryptoError> {
        unseal_with(self.box_secret(), label, 0, sealed)
    }
}
