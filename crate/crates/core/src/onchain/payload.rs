use serde::{Deserialize, Serialize};

use crate::codec;
use crate::crypto::{Ciphertext, Digest, NodePublicKey, RequestPublicKey, SealedBox, Signature};
use crate::storage::ReceiptBundle;
use crate::types::{Address, BlockRef, RequestId};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterPayload {
    pub node_key: NodePublicKey,
    /// Registered node whose enclave attested this one. Equal to the sender
    /// for the self-attested bootstrap registration.
    pub endorser: Address,
    pub attestation: Signature,
    pub deposit: u128,
    /// Only accepted on the bootstrap registration.
    pub initial_tx_key: Option<RequestPublicKey>,
}

/// Message an endorsing enclave signs for a newly attested node.
pub fn attestation_message(node_key: &NodePublicKey, sender: &Address) -> Vec<u8> {
    codec::encode(&(b"racetee/attest", node_key, sender))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeployPayload {
    pub enc_code: SealedBox,
    pub enc_config: SealedBox,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvokePayload {
    pub contract: Address,
    pub enc_input: SealedBox,
    pub enc_result_key: SealedBox,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlainTransfer {
    pub to: Address,
    pub amount: u128,
}

/// Integrity hashes of a contract's encrypted management info, code and state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractHashes {
    pub info: Digest,
    pub code: Digest,
    pub state: Digest,
}

/// Publicly visible reason a request produced no encrypted result.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectionMarker {
    /// Encrypted under a retired request-key epoch and the result key was
    /// unrecoverable.
    StaleKey,
    /// Could not be decrypted under any known request key.
    Undecryptable,
    /// A deployment whose code or configuration was invalid.
    InvalidDeployment,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResultPayload {
    Encrypted(Ciphertext),
    Rejected(RejectionMarker),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub request: RequestId,
    pub payload: ResultPayload,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractOutput {
    pub address: Address,
    /// `None` when the range left this contract's ciphertexts unchanged.
    pub hashes: Option<ContractHashes>,
    pub results: Vec<ResultRecord>,
    /// Plain bytes a contract chose to publish. Never encrypted.
    pub public_events: Vec<Vec<u8>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublishBody {
    pub start: BlockRef,
    pub end: BlockRef,
    pub outputs: Vec<ContractOutput>,
    pub rotation: Option<RequestPublicKey>,
    pub storage_receipt: ReceiptBundle,
}

impl PublishBody {
    pub fn signing_bytes(&self) -> Vec<u8> {
        codec::encode(&(b"racetee/publish", self))
    }
}

/// Execution output with its freshness proof (the signed start/end refs).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublishPayload {
    pub body: PublishBody,
    pub signature: Signature,
}
