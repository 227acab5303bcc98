use serde::{Deserialize, Serialize};

use crate::crypto::{derive_fresh_key, hash_parts, KeyRole, SymmetricKey};
use crate::rng::DetRng;
use crate::types::Address;
use crate::vm::Acl;

/// Deployment configuration, sealed to the request key by the deployer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeployConfig {
    pub acl: Acl,
    /// Contract key rotation period, in successful invocations.
    pub ckrp: u64,
}

/// Per-contract management record, stored encrypted under the info key.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfoP {
    pub owner: Address,
    pub acl: Acl,
    pub ckrp: u64,
    pub exec_counter: u64,
    key_seed: [u8; 32],
    pub k_code: SymmetricKey,
    pub k_st: SymmetricKey,
}

fn contract_key(seed: &[u8; 32], address: &Address, role: KeyRole, epoch: u64) -> SymmetricKey {
    let tag = format!("{role:?}");
    let s = hash_parts(&[b"racetee/contract-key", seed, &address.0, tag.as_bytes(), &epoch.to_be_bytes()]);
    derive_fresh_key(role, epoch, &mut DetRng::from_seed(s.0))
}

impl InfoP {
    /// `key_seed` must be secret and identical for every enclave that
    /// processes the deployment.
    pub fn new(owner: Address, config: DeployConfig, key_seed: [u8; 32], address: &Address) -> Self {
        Self {
            owner,
            acl: config.acl,
            ckrp: config.ckrp,
            exec_counter: 0,
            k_code: contract_key(&key_seed, address, KeyRole::Code, 0),
            k_st: contract_key(&key_seed, address, KeyRole::State, 0),
            key_seed,
        }
    }

    pub fn state_epoch(&self) -> u64 {
        self.exec_counter / self.ckrp
    }

    /// Counts `n` successful invocations and moves the state key to the
    /// epoch `floor(counter / ckrp)` if that changed.
    pub fn record_invocations(&mut self, n: u64, address: &Address) -> bool {
        self.exec_counter += n;
        let e = self.state_epoch();
        if e != self.k_st.epoch {
            self.k_st = contract_key(&self.key_seed, address, KeyRole::State, e);
            return true;
        }
        false
    }

    pub fn key_seed(&self) -> &[u8; 32] {
        &self.key_seed
    }
}
