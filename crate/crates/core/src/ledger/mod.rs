//! Simulated append-only chain: a pending pool, block production, Merkle
//! inclusion proofs and the on-chain state machines applied per block.

mod merkle;
mod tx;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec;
use crate::crypto::{hash, Digest};
use crate::onchain::{ChainParams, ChainState, TxOutcome};
use crate::types::{Address, BlockRef};

pub use merkle::{empty_root, leaf_hash, merkle_root, prove, verify_proof, IndexOutOfRange, MerkleProof, Side};
pub use tx::{SignedTransaction, TxBody, TxKind};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockHeader {
    pub number: u64,
    pub parent_hash: Digest,
    pub merkle_root: Digest,
    pub tick: u64,
}

impl BlockHeader {
    pub fn hash(&self) -> Digest {
        hash(&codec::encode(&(b"racetee/block", self)))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub header: BlockHeader,
    pub transactions: Vec<SignedTransaction>,
    pub hash: Digest,
}

impl Block {
    pub fn new(number: u64, parent_hash: Digest, tick: u64, transactions: Vec<SignedTransaction>) -> Self {
        let merkle_root = merkle_root(&Self::digests(&transactions));
        let header = BlockHeader { number, parent_hash, merkle_root, tick };
        Self { hash: header.hash(), header, transactions }
    }

    pub fn digests(txs: &[SignedTransaction]) -> Vec<Digest> {
        txs.iter().map(SignedTransaction::digest).collect()
    }

    pub fn number(&self) -> u64 {
        self.header.number
    }

    pub fn block_ref(&self) -> BlockRef {
        BlockRef { number: self.header.number, hash: self.hash }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SubmitError {
    #[error("bad signature")]
    BadSignature,
    #[error("stale nonce {got} (last accepted {last})")]
    StaleNonce { last: u64, got: u64 },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("unknown block {0}")]
    UnknownBlock(u64),
    #[error(transparent)]
    Proof(#[from] IndexOutOfRange),
    #[error("cannot reorganize the genesis block")]
    GenesisReorg,
}

pub struct Ledger {
    blocks: Vec<Block>,
    outcomes: Vec<Vec<TxOutcome>>,
    pool: Vec<SignedTransaction>,
    last_nonce: BTreeMap<Address, u64>,
    state: ChainState,
    prev_state: Option<ChainState>,
}

impl Ledger {
    /// Chain whose block 0 holds `genesis_txs` (normally the node registrations).
    pub fn genesis(params: ChainParams, genesis_txs: Vec<SignedTransaction>) -> Result<Self, SubmitError> {
        let mut last_nonce = BTreeMap::new();
        for tx in &genesis_txs {
            check(tx, &last_nonce)?;
            last_nonce.insert(tx.sender, tx.nonce);
        }
        let block = Block::new(0, Digest::default(), 0, genesis_txs);
        let mut state = ChainState::new(params, block.hash);
        let outcomes = state.apply_block(0, block.hash, &block.transactions);
        Ok(Self {
            blocks: vec![block],
            outcomes: vec![outcomes],
            pool: Vec::new(),
            last_nonce,
            state,
            prev_state: None,
        })
    }

    /// Signature and nonce check; accepted transactions queue in arrival order.
    pub fn submit(&mut self, tx: SignedTransaction) -> Result<(), SubmitError> {
        check(&tx, &self.last_nonce)?;
        self.last_nonce.insert(tx.sender, tx.nonce);
        self.pool.push(tx);
        Ok(())
    }

    pub fn pending(&self) -> usize {
        self.pool.len()
    }

    /// Drains the pool into a new block and applies it to on-chain state.
    pub fn produce_block(&mut self, tick: u64) -> &Block {
        let head = self.blocks.last().expect("genesis exists");
        let number = head.number() + 1;
        let block = Block::new(number, head.hash, tick, std::mem::take(&mut self.pool));
        self.prev_state = Some(self.state.clone());
        let outcomes = self.state.apply_block(number, block.hash, &block.transactions);
        self.blocks.push(block);
        self.outcomes.push(outcomes);
        self.blocks.last().expect("just pushed")
    }

    /// Drops the head block, restores the state before it and puts its
    /// transactions back at the front of the pool. Only one level deep.
    pub fn reorg_last(&mut self) -> Result<Block, LedgerError> {
        if self.blocks.len() <= 1 {
            return Err(LedgerError::GenesisReorg);
        }
        let prev = self.prev_state.take().ok_or(LedgerError::GenesisReorg)?;
        let block = self.blocks.pop().expect("checked length");
        self.outcomes.pop();
        self.state = prev;
        let mut pool = block.transactions.clone();
        pool.append(&mut self.pool);
        self.pool = pool;
        Ok(block)
    }

    pub fn chain_head(&self) -> BlockRef {
        self.blocks.last().expect("genesis exists").block_ref()
    }

    pub fn get_block(&self, number: u64) -> Result<&Block, LedgerError> {
        self.blocks.get(number as usize).ok_or(LedgerError::UnknownBlock(number))
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn outcomes(&self, number: u64) -> Result<&[TxOutcome], LedgerError> {
        self.outcomes.get(number as usize).map(Vec::as_slice).ok_or(LedgerError::UnknownBlock(number))
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn prove_inclusion(&self, number: u64, index: usize) -> Result<MerkleProof, LedgerError> {
        let b = self.get_block(number)?;
        Ok(prove(&Block::digests(&b.transactions), index)?)
    }
}

fn check(tx: &SignedTransaction, last: &BTreeMap<Address, u64>) -> Result<(), SubmitError> {
    if !tx.check_signature() {
        return Err(SubmitError::BadSignature);
    }
    if let Some(&l) = last.get(&tx.sender) {
        if tx.nonce <= l {
            return Err(SubmitError::StaleNonce { last: l, got: tx.nonce });
        }
    }
    Ok(())
}

pub fn verify_inclusion(header: &BlockHeader, tx: &SignedTransaction, proof: &MerkleProof) -> bool {
    verify_proof(&header.merkle_root, &tx.digest(), proof)
}
