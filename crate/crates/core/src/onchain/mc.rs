use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::crypto::{verify, Digest, NodePublicKey, RequestPublicKey};
use crate::onchain::{attestation_message, ContractHashes, PublishPayload, RegisterPayload};
use crate::storage::{select_subnet, subnet_seed, verify_receipt, RstsReceipt};
use crate::types::{Address, BlockRef};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeEntry {
    pub address: Address,
    pub key: NodePublicKey,
    pub deposit: u128,
    pub registered_at: u64,
}

/// One request-encryption public key and its validity interval in blocks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TxKeyRecord {
    pub public: RequestPublicKey,
    pub installed_at: u64,
    /// Last block in which requests under this key are still accepted.
    /// `None` while it is the current key.
    pub expires_at: Option<u64>,
    /// Storage digest of the sealed peer envelopes for this epoch.
    pub envelope: Option<Digest>,
}

impl TxKeyRecord {
    pub fn valid_at(&self, block: u64) -> bool {
        block >= self.installed_at && self.expires_at.map_or(true, |x| block <= x)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Remuneration {
    pub start: u64,
    pub end: u64,
    pub node: Address,
    pub amount: u128,
    pub paid_in_block: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegisterRejection {
    #[error("sender already registered")]
    Duplicate,
    #[error("attestation does not verify against a registered node")]
    InvalidAttestation,
    #[error("deposit {found} below minimum {min}")]
    DepositTooLow { found: u128, min: u128 },
    #[error("initial request key only allowed on the bootstrap registration")]
    UnexpectedInitialKey,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PublishRejection {
    #[error("sender is not a registered node")]
    NotRegistered,
    #[error("start block {found} does not match latest executed block {expected}")]
    StartMismatch { expected: u64, found: u64 },
    #[error("end block invalid: {0}")]
    EndInvalid(String),
    #[error("bad node signature")]
    BadSignature,
    #[error("bad output: {0}")]
    BadOutput(String),
    #[error("bad storage receipt: {0}")]
    BadReceipt(String),
    #[error("bad key rotation: {0}")]
    BadRotation(String),
}

impl PublishRejection {
    /// Stale or duplicate submissions and stale-chain views.
    pub fn is_freshness(&self) -> bool {
        matches!(self, PublishRejection::StartMismatch { .. } | PublishRejection::EndInvalid(_))
    }

    pub fn label(&self) -> &'static str {
        match self {
            PublishRejection::NotRegistered => "not_registered",
            PublishRejection::StartMismatch { .. } => "start_mismatch",
            PublishRejection::EndInvalid(_) => "end_invalid",
            PublishRejection::BadSignature => "bad_signature",
            PublishRejection::BadOutput(_) => "bad_output",
            PublishRejection::BadReceipt(_) => "bad_receipt",
            PublishRejection::BadRotation(_) => "bad_rotation",
        }
    }
}

/// Management contract: node registry, LEB, integrity hashes and the
/// request-key history.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct McState {
    pub leb: BlockRef,
    /// Registration order; the position is the node's selection index.
    pub node_list: Vec<NodeEntry>,
    pub tx_keys: Vec<TxKeyRecord>,
    pub prog_list: BTreeMap<Address, Digest>,
    pub prog_codes: BTreeMap<Address, Digest>,
    pub prog_states: BTreeMap<Address, Digest>,
    /// Request fees waiting for the publish that covers their block.
    pub escrow: BTreeMap<u64, u128>,
    pub remunerations: Vec<Remuneration>,
}

impl McState {
    pub fn new(genesis: BlockRef) -> Self {
        Self {
            leb: genesis,
            node_list: Vec::new(),
            tx_keys: Vec::new(),
            prog_list: BTreeMap::new(),
            prog_codes: BTreeMap::new(),
            prog_states: BTreeMap::new(),
            escrow: BTreeMap::new(),
            remunerations: Vec::new(),
        }
    }

    pub fn node_index(&self, address: &Address) -> Option<usize> {
        self.node_list.iter().position(|e| &e.address == address)
    }

    pub fn node(&self, address: &Address) -> Option<&NodeEntry> {
        self.node_list.iter().find(|e| &e.address == address)
    }

    pub fn current_tx_key(&self) -> Option<&TxKeyRecord> {
        self.tx_keys.last()
    }

    pub fn tx_key(&self, epoch: u64) -> Option<&TxKeyRecord> {
        self.tx_keys.iter().find(|k| k.public.epoch == epoch)
    }

    pub fn hashes(&self, address: &Address) -> Option<ContractHashes> {
        Some(ContractHashes {
            info: *self.prog_list.get(address)?,
            code: *self.prog_codes.get(address)?,
            state: *self.prog_states.get(address)?,
        })
    }

    pub fn check_register(
        &self,
        sender: &Address,
        p: &RegisterPayload,
        min_deposit: u128,
    ) -> Result<(), RegisterRejection> {
        if self.node(sender).is_some() {
            return Err(RegisterRejection::Duplicate);
        }
        let bootstrap = self.node_list.is_empty() && self.tx_keys.is_empty();
        let endorser_key = if bootstrap && p.endorser == *sender {
            p.node_key.verify
        } else {
            match self.node(&p.endorser) {
                Some(e) => e.key.verify,
                None => return Err(RegisterRejection::InvalidAttestation),
            }
        };
        let msg = attestation_message(&p.node_key, sender);
        if !matches!(verify(&endorser_key, &msg, &p.attestation), Ok(true)) {
            return Err(RegisterRejection::InvalidAttestation);
        }
        if p.deposit < min_deposit {
            return Err(RegisterRejection::DepositTooLow { found: p.deposit, min: min_deposit });
        }
        match (bootstrap, &p.initial_tx_key) {
            (true, None) => Err(RegisterRejection::InvalidAttestation),
            (false, Some(_)) => Err(RegisterRejection::UnexpectedInitialKey),
            _ => Ok(()),
        }
    }

    pub fn register(&mut self, sender: Address, p: &RegisterPayload, block: u64) -> usize {
        if let Some(k) = p.initial_tx_key {
            self.tx_keys.push(TxKeyRecord { public: k, installed_at: block, expires_at: None, envelope: None });
        }
        self.node_list.push(NodeEntry { address: sender, key: p.node_key, deposit: p.deposit, registered_at: block });
        self.node_list.len() - 1
    }

    /// Removes the node, compacting the positions of later nodes. Returns the
    /// deposit to refund.
    pub fn withdraw(&mut self, sender: &Address) -> Option<u128> {
        let i = self.node_index(sender)?;
        Some(self.node_list.remove(i).deposit)
    }

    fn check_receipt(&self, r: &RstsReceipt, round_seed: &Digest, s: usize, t: usize) -> Result<(), String> {
        let expected = select_subnet(&subnet_seed(round_seed, &r.digest), self.node_list.len(), s)
            .map_err(|e| e.to_string())?;
        if r.subnet != expected {
            return Err(format!("subnet for {} was not drawn from the round seed", r.digest));
        }
        for c in &r.confirmations {
            if self.node_list.get(c.index as usize).map(|e| e.address) != Some(c.node) {
                return Err(format!("confirmer {} is not node {}", c.node, c.index));
            }
        }
        verify_receipt(r, s, t, |a| self.node(a).map(|e| e.key.verify)).map_err(|e| e.to_string())
    }

    /// Every publish guard, in order. `canonical` returns the canonical hash of
    /// an already produced block. Output checks against PCs are done by the
    /// caller through `output_ok`.
    #[allow(clippy::too_many_arguments)]
    pub fn check_publish(
        &self,
        sender: &Address,
        p: &PublishPayload,
        current_block: u64,
        canonical: impl Fn(u64) -> Option<Digest>,
        output_ok: impl Fn(&PublishPayload) -> Result<(), String>,
        subnet_size: usize,
        threshold: usize,
    ) -> Result<(), PublishRejection> {
        let node = self.node(sender).ok_or(PublishRejection::NotRegistered)?;
        let b = &p.body;
        if b.start != self.leb {
            return Err(PublishRejection::StartMismatch { expected: self.leb.number, found: b.start.number });
        }
        if b.end.number <= b.start.number {
            return Err(PublishRejection::EndInvalid("end not after start".into()));
        }
        if b.end.number >= current_block {
            return Err(PublishRejection::EndInvalid("end not before the including block".into()));
        }
        if canonical(b.end.number) != Some(b.end.hash) {
            return Err(PublishRejection::EndInvalid(format!("hash at {} is not canonical", b.end.number)));
        }
        if !matches!(verify(&node.key.verify, &b.signing_bytes(), &p.signature), Ok(true)) {
            return Err(PublishRejection::BadSignature);
        }
        output_ok(p).map_err(PublishRejection::BadOutput)?;

        let mut needed = Vec::new();
        for o in &b.outputs {
            let Some(h) = o.hashes else { continue };
            let old = self.hashes(&o.address);
            for (new, prev) in [
                (h.info, old.map(|x| x.info)),
                (h.code, old.map(|x| x.code)),
                (h.state, old.map(|x| x.state)),
            ] {
                if prev != Some(new) {
                    needed.push(new);
                }
            }
        }
        for d in needed {
            let r = b
                .storage_receipt
                .blobs
                .iter()
                .find(|r| r.digest == d)
                .ok_or_else(|| PublishRejection::BadReceipt(format!("no receipt for {d}")))?;
            self.check_receipt(r, &b.end.hash, subnet_size, threshold).map_err(PublishRejection::BadReceipt)?;
        }

        if let Some(k) = &b.rotation {
            let cur = self.current_tx_key().map(|k| k.public.epoch);
            if cur.map(|e| e + 1) != Some(k.epoch) {
                return Err(PublishRejection::BadRotation(format!("epoch {} does not follow {:?}", k.epoch, cur)));
            }
            let r = b
                .storage_receipt
                .key_envelope
                .as_ref()
                .ok_or_else(|| PublishRejection::BadRotation("missing key envelope receipt".into()))?;
            self.check_receipt(r, &b.end.hash, subnet_size, threshold).map_err(PublishRejection::BadRotation)?;
        }
        Ok(())
    }

    /// Applies an already checked publish to the MC fields. Returns the
    /// remuneration owed to the sender.
    pub fn apply_publish(
        &mut self,
        sender: Address,
        p: &PublishPayload,
        current_block: u64,
        base_reward: u128,
        transition_window: u64,
    ) -> u128 {
        let b = &p.body;
        for o in &b.outputs {
            if let Some(h) = o.hashes {
                self.prog_list.insert(o.address, h.info);
                self.prog_codes.insert(o.address, h.code);
                self.prog_states.insert(o.address, h.state);
            }
        }
        let covered: Vec<u64> = self.escrow.range(b.start.number + 1..=b.end.number).map(|(k, _)| *k).collect();
        let fees: u128 = covered.iter().map(|k| self.escrow.remove(k).unwrap_or(0)).sum();
        let amount = fees + base_reward;
        self.remunerations.push(Remuneration {
            start: b.start.number,
            end: b.end.number,
            node: sender,
            amount,
            paid_in_block: current_block,
        });
        if let Some(k) = b.rotation {
            if let Some(last) = self.tx_keys.last_mut() {
                last.expires_at = Some(current_block + transition_window);
            }
            self.tx_keys.push(TxKeyRecord {
                public: k,
                installed_at: current_block,
                expires_at: None,
                envelope: b.storage_receipt.key_envelope.as_ref().map(|r| r.digest),
            });
        }
        self.leb = b.end;
        amount
    }

    pub fn snapshot(&self) -> McSnapshot {
        McSnapshot {
            leb: (self.leb.number, self.leb.hash.to_string()),
            nodes: self
                .node_list
                .iter()
                .map(|e| NodeSnapshot { address: e.address.to_string(), deposit: e.deposit, registered_at: e.registered_at })
                .collect(),
            tx_keys: self.tx_keys.clone(),
            prog_list: self.prog_list.iter().map(|(a, d)| (a.to_string(), d.to_string())).collect(),
            prog_codes: self.prog_codes.iter().map(|(a, d)| (a.to_string(), d.to_string())).collect(),
            prog_states: self.prog_states.iter().map(|(a, d)| (a.to_string(), d.to_string())).collect(),
            escrow: self.escrow.values().sum(),
        }
    }
}

#[derive(Serialize)]
pub struct NodeSnapshot {
    pub address: String,
    pub deposit: u128,
    pub registered_at: u64,
}

#[derive(Serialize)]
pub struct McSnapshot {
    pub leb: (u64, String),
    pub nodes: Vec<NodeSnapshot>,
    pub tx_keys: Vec<TxKeyRecord>,
    pub prog_list: BTreeMap<String, String>,
    pub prog_codes: BTreeMap<String, String>,
    pub prog_states: BTreeMap<String, String>,
    pub escrow: u128,
}
