//! Canonical byte encoding used for hashing, signing and the enclave
//! boundary. Bincode with fixed-width integers; field order is the struct
//! declaration order, so encodings are stable for a given type layout.

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("decode failed: {0}")]
    Decode(String),
    #[error("unsupported message version {found} (expected {expected})")]
    Version { found: u8, expected: u8 },
    #[error("empty message")]
    Empty,
}

pub fn encode<T: Serialize>(value: &T) -> Vec<u8> {
    bincode::serialize(value).expect("in-memory serialization cannot fail")
}

pub fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, CodecError> {
    bincode::deserialize(bytes).map_err(|e| CodecError::Decode(e.to_string()))
}

/// `version ‖ bincode(value)`.
pub fn encode_versioned<T: Serialize>(version: u8, value: &T) -> Vec<u8> {
    let mut out = vec![version];
    out.extend(encode(value));
    out
}

pub fn decode_versioned<T: DeserializeOwned>(expected: u8, bytes: &[u8]) -> Result<T, CodecError> {
    let (&v, rest) = bytes.split_first().ok_or(CodecError::Empty)?;
    if v != expected {
        return Err(CodecError::Version { found: v, expected });
    }
    decode(rest)
}
