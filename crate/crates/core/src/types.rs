//! Small identifiers shared by every layer: addresses, block references and
//! request coordinates.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::crypto::{hash_parts, Digest};

macro_rules! hex_bytes_serde {
    ($ty:ident, $len:expr) => {
        impl ::serde::Serialize for $ty {
            fn serialize<S: ::serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                if s.is_human_readable() {
                    s.serialize_str(&::hex::encode(self.0))
                } else {
                    serde::Serialize::serialize(&self.0, s)
                }
            }
        }

        impl<'de> ::serde::Deserialize<'de> for $ty {
            fn deserialize<D: ::serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                if d.is_human_readable() {
                    let s = <String as ::serde::Deserialize>::deserialize(d)?;
                    let v = ::hex::decode(&s).map_err(serde::de::Error::custom)?;
                    let arr: [u8; $len] = v
                        .try_into()
                        .map_err(|_| serde::de::Error::custom(concat!("expected ", $len, " bytes")))?;
                    Ok($ty(arr))
                } else {
                    Ok($ty(<[u8; $len] as ::serde::Deserialize>::deserialize(d)?))
                }
            }
        }

        impl ::std::fmt::Debug for $ty {
            fn fmt(&self, f: &mut ::std::fmt::Formatter<'_>) -> ::std::fmt::Result {
                write!(f, "{}({}..)", stringify!($ty), &::hex::encode(self.0)[..8])
            }
        }

        impl ::std::fmt::Display for $ty {
            fn fmt(&self, f: &mut ::std::fmt::Formatter<'_>) -> ::std::fmt::Result {
                f.write_str(&::hex::encode(self.0))
            }
        }
    };
}
pub(crate) use hex_bytes_serde;

/// 20-byte account or contract address.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Address(pub [u8; 20]);

hex_bytes_serde!(Address, 20);

impl Address {
    /// Address of an account controlled by `public_key`.
    pub fn from_public_key(public_key: &[u8]) -> Self {
        Self::truncate(&hash_parts(&[b"racetee/account", public_key]))
    }

    /// Deterministic address of a contract deployed by `deployer` with `nonce`.
    pub fn contract(deployer: &Address, nonce: u64) -> Self {
        Self::truncate(&hash_parts(&[b"racetee/contract", &deployer.0, &nonce.to_be_bytes()]))
    }

    fn truncate(d: &Digest) -> Self {
        let mut out = [0u8; 20];
        out.copy_from_slice(&d.0[..20]);
        Address(out)
    }
}

/// A block number paired with its header hash.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockRef {
    pub number: u64,
    pub hash: Digest,
}

/// Global coordinates of an on-chain request: (block number, transaction index).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RequestId {
    pub block: u64,
    pub index: u32,
}

impl fmt::Display for RequestId {
    fn fmt(&self, f: &mut ::std::fmt::Formatter<'_>) -> ::std::fmt::Result {
        write!(f, "{}:{}", self.block, self.index)
    }
}
