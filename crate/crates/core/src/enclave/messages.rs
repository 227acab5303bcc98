//! Enclave/host boundary. Every message crossing it is encoded as
//! `version(1) ‖ bincode(message)`; a version mismatch is refused.
//!
//! Inbound: block delivery, blobs to acknowledge, acknowledgements from
//! peers, clock ticks, key provisioning and attestation requests.
//! Outbound: publish payloads, blobs to disseminate, acknowledgements,
//! attestations and status events. Nothing outbound carries plaintext
//! contract data or key material.

use serde::{Deserialize, Serialize};

use crate::codec::{self, CodecError};
use crate::crypto::{Digest, NodePublicKey, SealedBox, Signature};
use crate::ledger::Block;
use crate::onchain::PublishPayload;
use crate::storage::{Confirmation, StorageBlob};
use crate::types::Address;

pub const BOUNDARY_VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HostInput {
    /// Consecutive blocks, oldest first. Gaps are buffered until filled.
    Blocks(Vec<Block>),
    /// A peer asks this node to store and acknowledge a blob.
    StoreBlob { from: Address, blob: StorageBlob },
    /// Acknowledgement for a blob this enclave disseminated.
    Ack { digest: Digest, confirmation: Confirmation },
    /// Clock advance; lets pending disseminations time out.
    Tick,
    /// Management keys sealed to this enclave by its endorser.
    Provision(SealedBox),
    /// Attest a joining node: sign its key and provision it.
    Attest { node_key: NodePublicKey, operator: Address },
}

/// Host-supplied time plus the input. The enclave has no clock of its own.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostMessage {
    pub now: u64,
    pub input: HostInput,
}

impl HostMessage {
    pub fn encode(&self) -> Vec<u8> {
        codec::encode_versioned(BOUNDARY_VERSION, self)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        codec::decode_versioned(BOUNDARY_VERSION, bytes)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnclaveOutput {
    /// Signed execution output for the round decided at block `round`.
    Publish { round: u64, payload: PublishPayload },
    SendBlob { to: Address, blob: StorageBlob },
    /// Blob this node must keep because it is in the blob's subnet.
    StoreLocal(StorageBlob),
    Ack { to: Address, digest: Digest, confirmation: Confirmation },
    Attestation { operator: Address, signature: Signature, provision: SealedBox },
    Event(EnclaveEvent),
}

impl EnclaveOutput {
    pub fn encode(&self) -> Vec<u8> {
        codec::encode_versioned(BOUNDARY_VERSION, self)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        codec::decode_versioned(BOUNDARY_VERSION, bytes)
    }
}

/// Public status reports. Only block numbers, digests and fixed labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnclaveEvent {
    BlockRejected { number: u64, reason: String },
    Selected { round: u64, start: u64 },
    RoundSkipped { round: u64, reason: String },
    RoundAbandoned { round: u64, reason: String },
    Rotated { round: u64, epoch: u64 },
    KeyAdopted { epoch: u64 },
    KeyUnavailable { epoch: u64 },
    BlobUnavailable { digest: Digest },
    Malformed { reason: String },
}
