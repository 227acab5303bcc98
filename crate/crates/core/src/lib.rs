//! Simulator for a TEE-backed confidential smart contract layer on a
//! public chain: enclaves race to execute request ranges off-chain and
//! the first valid, fresh result posted on-chain wins.

pub mod analysis;
pub mod codec;
pub mod crypto;
pub mod enclave;
pub mod ledger;
pub mod onchain;
pub mod rng;
pub mod scalar;
pub mod sim;
pub mod storage;
pub mod types;
pub mod vm;

/// Exact scalar for the probability formulas.
pub type Exact = num_rational::BigRational;
/// Floating scalar for the probability formulas.
pub type Approx = f64;
