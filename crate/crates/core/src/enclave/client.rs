//! User-side helpers: sealing requests to the current request key and
//! opening results with the per-request result key.

use serde::{Deserialize, Serialize};

use crate::codec;
use crate::crypto::{
    aead_decrypt, aead_encrypt, pk_encrypt, AssociatedData, Ciphertext, CryptoError, KeyRole,
    RequestPublicKey, SymmetricKey,
};
use crate::onchain::{DeployPayload, InvokePayload};
use crate::rng::DetRng;
use crate::types::{Address, RequestId};
use crate::vm::{Call, ContractProgram, Value, VmError};

use super::info::DeployConfig;

/// Why a decryptable request produced no execution.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RequestError {
    Vm(VmError),
    /// Sealed under a request key epoch that had already expired when the
    /// request was included.
    StaleKey,
    /// Input did not decode as a call.
    BadInput(String),
}

impl RequestError {
    pub fn label(&self) -> &'static str {
        match self {
            RequestError::Vm(e) => e.label(),
            RequestError::StaleKey => "stale_key",
            RequestError::BadInput(_) => "bad_input",
        }
    }
}

/// Result plaintext, encrypted under the caller's result key.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultPlain {
    pub request: RequestId,
    pub outcome: Result<Value, RequestError>,
    /// VM steps consumed.
    pub steps: u64,
}

pub fn result_ad(contract: &Address) -> AssociatedData {
    AssociatedData::new(*contract, 0, KeyRole::Result)
}

pub fn seal_result(k_res: &SymmetricKey, contract: &Address, plain: &ResultPlain) -> Result<Ciphertext, CryptoError> {
    aead_encrypt(k_res, &codec::encode(plain), &result_ad(contract))
}

pub fn open_result(k_res: &SymmetricKey, contract: &Address, ct: &Ciphertext) -> Result<ResultPlain, CryptoError> {
    let plain = aead_decrypt(k_res, ct, &result_ad(contract))?;
    codec::decode(&plain).map_err(|_| CryptoError::Malformed)
}

pub fn seal_deploy(
    key: &RequestPublicKey,
    program: &ContractProgram,
    config: &DeployConfig,
    rng: &mut DetRng,
) -> DeployPayload {
    DeployPayload {
        enc_code: pk_encrypt(key, &codec::encode(program), rng),
        enc_config: pk_encrypt(key, &codec::encode(config), rng),
    }
}

/// Returns the payload and the fresh result key the caller keeps.
pub fn seal_invoke(
    key: &RequestPublicKey,
    contract: Address,
    call: &Call,
    rng: &mut DetRng,
) -> (InvokePayload, SymmetricKey) {
    let k_res = SymmetricKey::generate(KeyRole::Result, 0, rng);
    let payload = InvokePayload {
        contract,
        enc_input: pk_encrypt(key, &codec::encode(call), rng),
        enc_result_key: pk_encrypt(key, k_res.bytes(), rng),
    };
    (payload, k_res)
}
