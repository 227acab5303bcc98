//! On-chain management contract (MC) and program contracts (PCs), executed
//! deterministically for every block by the ledger and by every enclave's
//! chain mirror.

mod mc;
mod payload;
mod pc;

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::crypto::Digest;
use crate::ledger::{SignedTransaction, TxBody, TxKind};
use crate::types::{Address, BlockRef, RequestId};

pub use mc::{
    McSnapshot, McState, NodeEntry, PublishRejection, RegisterRejection, Remuneration, TxKeyRecord,
};
pub use payload::{
    attestation_message, ContractHashes, ContractOutput, DeployPayload, InvokePayload, PlainTransfer,
    PublishBody, PublishPayload, RegisterPayload, RejectionMarker, ResultPayload, ResultRecord,
};
pub use pc::{Deployment, PcError, PcRequest, PcSnapshot, PcState, ResultStatus};

pub const TX_BASE_COST: u64 = 21_000;
pub const TX_BYTE_COST: u64 = 16;

/// On-chain cost counter for a transaction with `payload_len` bytes.
pub fn tx_cost(payload_len: usize) -> u64 {
    TX_BASE_COST + TX_BYTE_COST * payload_len as u64
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ChainParams {
    /// Management key rotation period, in blocks.
    pub mkrp: u64,
    /// Blocks after a rotation during which the previous request key stays valid.
    pub transition_window: u64,
    pub min_deposit: u128,
    /// Fee escrowed by every deploy and invoke.
    pub request_fee: u128,
    /// Paid on every accepted publish, including empty ranges.
    pub base_reward: u128,
    pub rsts_subnet: usize,
    pub rsts_threshold: usize,
    /// Starting balance of every account.
    pub initial_balance: u128,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TxRejection {
    #[error("payload does not decode: {0}")]
    Decode(String),
    #[error("insufficient funds: need {needed}, have {available}")]
    InsufficientFunds { needed: u128, available: u128 },
    #[error("register rejected: {0}")]
    Register(#[from] RegisterRejection),
    #[error("sender is not a registered node")]
    UnknownNode,
    #[error("unknown program contract {0}")]
    UnknownContract(Address),
    #[error("contract {0} already exists")]
    DuplicateContract(Address),
    #[error("publish rejected: {0}")]
    Publish(#[from] PublishRejection),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TxEffect {
    Registered { index: usize },
    Withdrawn { refund: u128 },
    Deployed { address: Address, request: RequestId },
    Invoked { contract: Address, request: RequestId },
    Published { remuneration: u128, rotation_epoch: Option<u64> },
    Transferred,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TxOutcome {
    pub index: u32,
    pub sender: Address,
    pub kind: TxKind,
    pub cost: u64,
    pub result: Result<TxEffect, TxRejection>,
}

/// Full on-chain state: MC, all PCs, account balances and the canonical hash
/// of every applied block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChainState {
    pub params: ChainParams,
    pub mc: McState,
    pub pcs: BTreeMap<Address, PcState>,
    balances: BTreeMap<Address, u128>,
    block_hashes: Vec<Digest>,
}

impl ChainState {
    /// State before the genesis block is applied. LEB starts at the genesis block.
    pub fn new(params: ChainParams, genesis_hash: Digest) -> Self {
        Self {
            params,
            mc: McState::new(BlockRef { number: 0, hash: genesis_hash }),
            pcs: BTreeMap::new(),
            balances: BTreeMap::new(),
            block_hashes: Vec::new(),
        }
    }

    pub fn height(&self) -> Option<u64> {
        (self.block_hashes.len() as u64).checked_sub(1)
    }

    pub fn canonical_hash(&self, number: u64) -> Option<Digest> {
        self.block_hashes.get(number as usize).copied()
    }

    pub fn balance(&self, a: &Address) -> u128 {
        self.balances.get(a).copied().unwrap_or(self.params.initial_balance)
    }

    fn credit(&mut self, a: Address, amount: u128) {
        let b = self.balance(&a);
        self.balances.insert(a, b + amount);
    }

    fn debit(&mut self, a: Address, amount: u128) -> Result<(), TxRejection> {
        let b = self.balance(&a);
        if b < amount {
            return Err(TxRejection::InsufficientFunds { needed: amount, available: b });
        }
        self.balances.insert(a, b - amount);
        Ok(())
    }

    pub fn read_result(&self, contract: &Address, id: &RequestId) -> Result<ResultStatus, TxRejection> {
        let pc = self.pcs.get(contract).ok_or(TxRejection::UnknownContract(*contract))?;
        pc.read_result(id).map_err(|e| TxRejection::Decode(e.to_string()))
    }

    /// Applies block `number` with header hash `hash`. Every transaction gets
    /// an outcome; failures never abort the block.
    pub fn apply_block(&mut self, number: u64, hash: Digest, txs: &[SignedTransaction]) -> Vec<TxOutcome> {
        debug_assert_eq!(self.block_hashes.len() as u64, number);
        self.block_hashes.push(hash);
        txs.iter()
            .enumerate()
            .map(|(i, tx)| {
                let id = RequestId { block: number, index: i as u32 };
                TxOutcome {
                    index: i as u32,
                    sender: tx.sender,
                    kind: tx.kind,
                    cost: tx_cost(tx.payload.len()),
                    result: self.apply_tx(id, tx),
                }
            })
            .collect()
    }

    fn apply_tx(&mut self, id: RequestId, tx: &SignedTransaction) -> Result<TxEffect, TxRejection> {
        let body = tx.body().map_err(|e| TxRejection::Decode(e.to_string()))?;
        match body {
            TxBody::Register(p) => {
                self.mc.check_register(&tx.sender, &p, self.params.min_deposit)?;
                self.debit(tx.sender, p.deposit)?;
                let index = self.mc.register(tx.sender, &p, id.block);
                Ok(TxEffect::Registered { index })
            }
            TxBody::Withdraw => {
                let refund = self.mc.withdraw(&tx.sender).ok_or(TxRejection::UnknownNode)?;
                self.credit(tx.sender, refund);
                Ok(TxEffect::Withdrawn { refund })
            }
            TxBody::DeployPC(p) => {
                let address = Address::contract(&tx.sender, tx.nonce);
                if self.pcs.contains_key(&address) {
                    return Err(TxRejection::DuplicateContract(address));
                }
                self.debit(tx.sender, self.params.request_fee)?;
                *self.mc.escrow.entry(id.block).or_default() += self.params.request_fee;
                let dep = Deployment { enc_code: p.enc_code, enc_config: p.enc_config, sender: tx.sender, request: id };
                self.pcs.insert(address, PcState::deploy(address, dep));
                Ok(TxEffect::Deployed { address, request: id })
            }
            TxBody::InvokePC(p) => {
                if !self.pcs.contains_key(&p.contract) {
                    return Err(TxRejection::UnknownContract(p.contract));
                }
                self.debit(tx.sender, self.params.request_fee)?;
                *self.mc.escrow.entry(id.block).or_default() += self.params.request_fee;
                let pc = self.pcs.get_mut(&p.contract).expect("checked above");
                pc.execute(PcRequest { id, enc_input: p.enc_input, enc_result_key: p.enc_result_key, sender: tx.sender });
                Ok(TxEffect::Invoked { contract: p.contract, request: id })
            }
            TxBody::Publish(p) => {
                let pcs = &self.pcs;
                let hashes = &self.block_hashes;
                self.mc.check_publish(
                    &tx.sender,
                    &p,
                    id.block,
                    |n| hashes.get(n as usize).copied(),
                    |p| check_outputs(pcs, p),
                    self.params.rsts_subnet,
                    self.params.rsts_threshold,
                )?;
                for o in &p.body.outputs {
                    let pc = self.pcs.get_mut(&o.address).expect("checked by check_outputs");
                    for r in &o.results {
                        pc.record_result(r.request, r.payload.clone()).expect("checked by check_outputs");
                    }
                }
                let amount = self.mc.apply_publish(
                    tx.sender,
                    &p,
                    id.block,
                    self.params.base_reward,
                    self.params.transition_window,
                );
                self.credit(tx.sender, amount);
                Ok(TxEffect::Published { remuneration: amount, rotation_epoch: p.body.rotation.map(|k| k.epoch) })
            }
            TxBody::Plain(t) => {
                self.debit(tx.sender, t.amount)?;
                self.credit(t.to, t.amount);
                Ok(TxEffect::Transferred)
            }
        }
    }

    pub fn snapshot(&self, block: u64) -> StateSnapshot {
        StateSnapshot {
            block,
            mc: self.mc.snapshot(),
            pcs: self.pcs.values().map(PcState::snapshot).collect(),
        }
    }
}

/// Results must target known requests inside the published range, once each.
fn check_outputs(pcs: &BTreeMap<Address, PcState>, p: &PublishPayload) -> Result<(), String> {
    let (from, to) = (p.body.start.number, p.body.end.number);
    let mut seen = std::collections::BTreeSet::new();
    for o in &p.body.outputs {
        let pc = pcs.get(&o.address).ok_or_else(|| format!("unknown contract {}", o.address))?;
        for r in &o.results {
            if r.request.block <= from || r.request.block > to {
                return Err(format!("result {} outside range", r.request));
            }
            if !seen.insert((o.address, r.request)) {
                return Err(format!("duplicate result {}", r.request));
            }
            pc.can_record(&r.request).map_err(|e| e.to_string())?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
pub struct StateSnapshot {
    pub block: u64,
    pub mc: McSnapshot,
    pub pcs: Vec<PcSnapshot>,
}
