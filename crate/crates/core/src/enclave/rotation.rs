//! Management key sets (info key plus request key pair) and the sealed
//! envelopes that carry them between enclaves.

use serde::{Deserialize, Serialize};

use crate::codec;
use crate::crypto::{
    derive_fresh_key, seal_to, CryptoError, KeyRole, NodeKeyPair, NodePublicKey, RequestKeyPair,
    RequestPublicKey, SealedBox, SymmetricKey,
};
use crate::onchain::NodeEntry;
use crate::rng::DetRng;
use crate::storage::{BlobKind, StorageBlob};
use crate::types::Address;

pub const ROTATION_LABEL: &[u8] = b"racetee/rotation";
pub const PROVISION_LABEL: &[u8] = b"racetee/provision";

/// Info key and request key pair of one management epoch.
#[derive(Clone, Debug)]
pub struct MgmtKeys {
    pub k_inf: SymmetricKey,
    pub kp_tx: RequestKeyPair,
}

impl MgmtKeys {
    pub fn generate(epoch: u64, rng: &mut DetRng) -> Self {
        Self { k_inf: derive_fresh_key(KeyRole::Info, epoch, rng), kp_tx: RequestKeyPair::generate(epoch, rng) }
    }

    pub fn epoch(&self) -> u64 {
        self.kp_tx.epoch
    }

    pub fn public(&self) -> RequestPublicKey {
        self.kp_tx.public()
    }

    fn to_wire(&self) -> MgmtKeysWire {
        MgmtKeysWire { epoch: self.epoch(), k_inf: *self.k_inf.bytes(), kp_tx: self.kp_tx.secret_bytes() }
    }

    fn from_wire(w: &MgmtKeysWire) -> Self {
        Self {
            k_inf: SymmetricKey::from_bytes(w.k_inf, KeyRole::Info, w.epoch),
            kp_tx: RequestKeyPair::from_secret_bytes(w.kp_tx, w.epoch),
        }
    }

    /// Raw secret bytes, for taint registration.
    pub fn secret_material(&self) -> [[u8; 32]; 2] {
        [*self.k_inf.bytes(), self.kp_tx.secret_bytes()]
    }
}

#[derive(Serialize, Deserialize)]
struct MgmtKeysWire {
    epoch: u64,
    k_inf: [u8; 32],
    kp_tx: [u8; 32],
}

/// One sealed copy of the new keys per registered peer, as a storage blob.
pub fn build_envelope(keys: &MgmtKeys, peers: &[NodeEntry], me: &Address, rng: &mut DetRng) -> StorageBlob {
    let plain = codec::encode(&keys.to_wire());
    let entries: Vec<(Address, SealedBox)> = peers
        .iter()
        .filter(|p| &p.address != me)
        .map(|p| (p.address, seal_to(&p.key.encrypt, ROTATION_LABEL, 0, &plain, rng)))
        .collect();
    StorageBlob::new(BlobKind::KeyEnvelope, codec::encode(&entries))
}

pub fn open_envelope(blob: &StorageBlob, me: &Address, keys: &NodeKeyPair) -> Result<MgmtKeys, CryptoError> {
    let entries: Vec<(Address, SealedBox)> = codec::decode(&blob.ciphertext).map_err(|_| CryptoError::Malformed)?;
    let (_, sealed) = entries.iter().find(|(a, _)| a == me).ok_or(CryptoError::Malformed)?;
    let plain = keys.unseal(ROTATION_LABEL, sealed)?;
    let w: MgmtKeysWire = codec::decode(&plain).map_err(|_| CryptoError::Malformed)?;
    Ok(MgmtKeys::from_wire(&w))
}

pub fn seal_provision(keys: &[&MgmtKeys], to: &NodePublicKey, rng: &mut DetRng) -> SealedBox {
    let wire: Vec<MgmtKeysWire> = keys.iter().map(|k| k.to_wire()).collect();
    seal_to(&to.encrypt, PROVISION_LABEL, 0, &codec::encode(&wire), rng)
}

pub fn open_provision(sealed: &SealedBox, keys: &NodeKeyPair) -> Result<Vec<MgmtKeys>, CryptoError> {
    let plain = keys.unseal(PROVISION_LABEL, sealed)?;
    let wire: Vec<MgmtKeysWire> = codec::decode(&plain).map_err(|_| CryptoError::Malformed)?;
    Ok(wire.iter().map(MgmtKeys::from_wire).collect())
}
