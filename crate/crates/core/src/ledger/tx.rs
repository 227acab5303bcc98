use serde::{Deserialize, Serialize};

use crate::codec::{self, CodecError};
use crate::crypto::{hash, sign, verify, Digest, Signature, SigningKeyPair, VerifyingKey};
use crate::onchain::{DeployPayload, InvokePayload, PlainTransfer, PublishPayload, RegisterPayload};
use crate::types::Address;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TxKind {
    Register,
    Withdraw,
    DeployPC,
    InvokePC,
    Publish,
    Plain,
}

impl TxKind {
    pub fn name(self) -> &'static str {
        match self {
            TxKind::Register => "register",
            TxKind::Withdraw => "withdraw",
            TxKind::DeployPC => "deploy_pc",
            TxKind::InvokePC => "invoke_pc",
            TxKind::Publish => "publish",
            TxKind::Plain => "plain",
        }
    }
}

/// Decoded transaction body.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TxBody {
    Register(RegisterPayload),
    Withdraw,
    DeployPC(DeployPayload),
    InvokePC(InvokePayload),
    Publish(PublishPayload),
    Plain(PlainTransfer),
}

impl TxBody {
    pub fn kind(&self) -> TxKind {
        match self {
            TxBody::Register(_) => TxKind::Register,
            TxBody::Withdraw => TxKind::Withdraw,
            TxBody::DeployPC(_) => TxKind::DeployPC,
            TxBody::InvokePC(_) => TxKind::InvokePC,
            TxBody::Publish(_) => TxKind::Publish,
            TxBody::Plain(_) => TxKind::Plain,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedTransaction {
    pub sender: Address,
    pub sender_key: VerifyingKey,
    pub kind: TxKind,
    /// Canonical encoding of the [`TxBody`].
    pub payload: Vec<u8>,
    pub nonce: u64,
    pub signature: Signature,
}

fn signing_bytes(key: &VerifyingKey, kind: TxKind, payload: &[u8], nonce: u64) -> Vec<u8> {
    codec::encode(&(b"racetee/tx", key, kind, payload, nonce))
}

impl SignedTransaction {
    pub fn new(key: &SigningKeyPair, body: &TxBody, nonce: u64) -> Self {
        let sender_key = key.public();
        let payload = codec::encode(body);
        let kind = body.kind();
        let signature = sign(key, &signing_bytes(&sender_key, kind, &payload, nonce));
        Self { sender: Address::from_public_key(&sender_key.0), sender_key, kind, payload, nonce, signature }
    }

    /// Signature valid, sender address derived from the signing key, and the
    /// payload decodes to a body of the declared kind.
    pub fn check_signature(&self) -> bool {
        if Address::from_public_key(&self.sender_key.0) != self.sender {
            return false;
        }
        let msg = signing_bytes(&self.sender_key, self.kind, &self.payload, self.nonce);
        matches!(verify(&self.sender_key, &msg, &self.signature), Ok(true))
    }

    pub fn body(&self) -> Result<TxBody, CodecError> {
        let body: TxBody = codec::decode(&self.payload)?;
        if body.kind() != self.kind {
            return Err(CodecError::Decode("payload kind does not match declared kind".into()));
        }
        Ok(body)
    }

    pub fn digest(&self) -> Digest {
        hash(&codec::encode(self))
    }
}
