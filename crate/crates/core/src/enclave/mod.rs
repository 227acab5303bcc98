//! The enclave program. It sees the world only through [`Enclave::handle`]:
//! encoded host messages in, encoded outputs out. Chain state is mirrored
//! from verified blocks; contract data comes from storage through a
//! [`BlobSource`] and is decrypted only in here.

pub mod client;
pub mod exec;
pub mod info;
pub mod messages;
pub mod rotation;
pub mod selection;

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::codec;
use crate::crypto::{hash, hash_parts, sign, Digest, NodeKeyPair, NodePublicKey, Signature};
use crate::ledger::{merkle_root, Block};
use crate::onchain::{attestation_message, ChainParams, ChainState, PublishBody, PublishPayload, RegisterPayload};
use crate::rng::DetRng;
use crate::storage::{select_subnet, sign_ack, subnet_seed, BlobStore, Dissemination, ReceiptBundle, StorageBlob};
use crate::types::{Address, BlockRef};
use crate::vm::{ContractProgram, KvState, VmConfig};

use exec::{PlainCache, RangeError, Secrets};
use info::InfoP;
use messages::{EnclaveEvent, EnclaveOutput, HostInput, HostMessage};
use rotation::MgmtKeys;

/// Host-side blob retrieval. The enclave checks every blob against its
/// digest, so a lying source can only make data unavailable.
pub trait BlobSource {
    fn fetch(&mut self, digest: &Digest) -> Option<StorageBlob>;
}

impl BlobSource for BlobStore {
    fn fetch(&mut self, digest: &Digest) -> Option<StorageBlob> {
        self.get(digest).cloned()
    }
}

/// A source with nothing in it.
pub struct NoBlobs;

impl BlobSource for NoBlobs {
    fn fetch(&mut self, _: &Digest) -> Option<StorageBlob> {
        None
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EnclaveConfig {
    pub committee: u64,
    pub vm: VmConfig,
    /// Publish ranges that contain no requests.
    pub publish_empty: bool,
    /// Ticks to wait for storage acknowledgements.
    pub rsts_timeout: u64,
    pub chain: ChainParams,
    pub genesis_hash: Digest,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BlockRejection {
    #[error("header hash mismatch")]
    HashMismatch,
    #[error("chain mismatch: parent hash does not match")]
    ChainMismatch,
    #[error("merkle mismatch")]
    MerkleMismatch,
    #[error("bad signature on transaction {0}")]
    BadTxSignature(usize),
    #[error("genesis block does not match")]
    GenesisMismatch,
}

/// Checks a block against its own header and the expected parent hash.
/// Block 0 is checked against the known genesis hash instead.
pub fn verify_block(block: &Block, expected_parent: &Digest, genesis_hash: &Digest) -> Result<(), BlockRejection> {
    if block.hash != block.header.hash() {
        return Err(BlockRejection::HashMismatch);
    }
    if block.number() == 0 {
        if block.hash != *genesis_hash {
            return Err(BlockRejection::GenesisMismatch);
        }
    } else if block.header.parent_hash != *expected_parent {
        return Err(BlockRejection::ChainMismatch);
    }
    if merkle_root(&Block::digests(&block.transactions)) != block.header.merkle_root {
        return Err(BlockRejection::MerkleMismatch);
    }
    if let Some(i) = block.transactions.iter().position(|t| !t.check_signature()) {
        return Err(BlockRejection::BadTxSignature(i));
    }
    Ok(())
}

/// Secrets sealed to the platform: the only enclave state that survives a
/// restart. Never leaves the machine.
#[derive(Clone)]
pub struct SealedKeyring {
    node_keys: NodeKeyPair,
    operator: Address,
    seed: [u8; 32],
    mgmt: BTreeMap<u64, MgmtKeys>,
}

impl std::fmt::Debug for SealedKeyring {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SealedKeyring({}, epochs {:?})", self.operator, self.mgmt.keys().collect::<Vec<_>>())
    }
}

struct PendingRound {
    body: PublishBody,
    blobs: Vec<Dissemination>,
    envelope: Option<Dissemination>,
    deadline: u64,
}

impl PendingRound {
    fn all(&mut self) -> impl Iterator<Item = &mut Dissemination> {
        self.blobs.iter_mut().chain(self.envelope.iter_mut())
    }

    fn is_complete(&self) -> bool {
        self.blobs.iter().chain(self.envelope.iter()).all(Dissemination::is_complete)
    }
}

pub struct Enclave {
    config: EnclaveConfig,
    keyring: SealedKeyring,
    chain: ChainState,
    pending_blocks: BTreeMap<u64, Block>,
    cache: PlainCache,
    rounds: BTreeMap<u64, PendingRound>,
    /// Keys this enclave generated for rotations not (yet) accepted.
    candidates: BTreeMap<u64, Vec<MgmtKeys>>,
    missing_reported: BTreeSet<u64>,
    secrets: Secrets,
    now: u64,
}

impl Enclave {
    /// A fresh enclave whose identity key is drawn from `seed`.
    pub fn launch(config: EnclaveConfig, seed: [u8; 32], operator: Address) -> Self {
        let node_keys = NodeKeyPair::generate(&mut DetRng::from_seed(seed).split("node-keys"));
        let keyring = SealedKeyring { node_keys, operator, seed, mgmt: BTreeMap::new() };
        Self::resume(config, keyring)
    }

    /// Restart from sealed storage: keys survive, everything else is
    /// rebuilt from blocks and blobs.
    pub fn resume(config: EnclaveConfig, keyring: SealedKeyring) -> Self {
        let chain = ChainState::new(config.chain.clone(), config.genesis_hash);
        let mut secrets: Secrets = Vec::new();
        for (i, s) in keyring.node_keys.secret_material().into_iter().enumerate() {
            secrets.push((format!("node_key/{}/{i}", keyring.operator), s.to_vec()));
        }
        let mut e = Self {
            config,
            keyring,
            chain,
            pending_blocks: BTreeMap::new(),
            cache: PlainCache::new(),
            rounds: BTreeMap::new(),
            candidates: BTreeMap::new(),
            missing_reported: BTreeSet::new(),
            secrets,
            now: 0,
        };
        let keys: Vec<MgmtKeys> = e.keyring.mgmt.values().cloned().collect();
        keys.iter().for_each(|k| e.register_mgmt_secret(k));
        e
    }

    pub fn sealed(&self) -> SealedKeyring {
        self.keyring.clone()
    }

    pub fn public_key(&self) -> NodePublicKey {
        self.keyring.node_keys.public()
    }

    pub fn operator(&self) -> Address {
        self.keyring.operator
    }

    /// Read-only view of the verified chain mirror.
    pub fn mirror(&self) -> &ChainState {
        &self.chain
    }

    /// Management key epochs currently held.
    pub fn key_epochs(&self) -> Vec<u64> {
        self.keyring.mgmt.keys().copied().collect()
    }

    fn rng(&self, label: &str, index: u64) -> DetRng {
        DetRng::from_seed(self.keyring.seed).split_indexed(label, index)
    }

    fn register_mgmt_secret(&mut self, k: &MgmtKeys) {
        for (i, s) in k.secret_material().into_iter().enumerate() {
            self.secrets.push((format!("mgmt/{}/{i}", k.epoch()), s.to_vec()));
        }
    }

    fn install(&mut self, k: MgmtKeys) -> bool {
        if self.keyring.mgmt.contains_key(&k.epoch()) {
            return false;
        }
        self.register_mgmt_secret(&k);
        self.keyring.mgmt.insert(k.epoch(), k);
        true
    }

    /// Registration for the first node: self-attested, carrying the epoch-0
    /// request key it just generated.
    pub fn bootstrap_registration(&mut self, deposit: u128) -> RegisterPayload {
        let keys = MgmtKeys::generate(0, &mut self.rng("bootstrap", 0));
        let public = keys.public();
        self.install(keys);
        let node_key = self.public_key();
        let attestation = sign(&self.keyring.node_keys.signing, &attestation_message(&node_key, &self.keyring.operator));
        RegisterPayload { node_key, endorser: self.keyring.operator, attestation, deposit, initial_tx_key: Some(public) }
    }

    pub fn registration(&self, endorser: Address, attestation: Signature, deposit: u128) -> RegisterPayload {
        RegisterPayload { node_key: self.public_key(), endorser, attestation, deposit, initial_tx_key: None }
    }

    /// Simulation instrument, not part of the boundary: secrets this enclave
    /// has handled since the last call, for leak scanning.
    pub fn drain_secrets(&mut self) -> Secrets {
        std::mem::take(&mut self.secrets)
    }

    /// Simulation instrument: decrypted view of every contract at the
    /// mirror's LEB.
    pub fn inspect_contracts(
        &mut self,
        source: &mut dyn BlobSource,
    ) -> Result<BTreeMap<Address, (InfoP, ContractProgram, KvState)>, RangeError> {
        exec::load_all(&self.chain, &self.keyring.mgmt, source, &mut self.cache)
    }

    /// Simulation instrument: digest over every contract's plaintext program,
    /// state and invocation count.
    pub fn plaintext_state_digest(&mut self, source: &mut dyn BlobSource) -> Result<Digest, RangeError> {
        let all = self.inspect_contracts(source)?;
        let view: BTreeMap<&Address, (&ContractProgram, &KvState, u64)> =
            all.iter().map(|(a, (i, p, s))| (a, (p, s, i.exec_counter))).collect();
        Ok(hash(&codec::encode(&view)))
    }

    /// Processes one encoded host message and returns encoded outputs.
    pub fn handle(&mut self, bytes: &[u8], source: &mut dyn BlobSource) -> Vec<Vec<u8>> {
        let mut out = Vec::new();
        match HostMessage::decode(bytes) {
            Err(e) => out.push(EnclaveOutput::Event(EnclaveEvent::Malformed { reason: e.to_string() })),
            Ok(m) => {
                self.now = self.now.max(m.now);
                match m.input {
                    HostInput::Blocks(bs) => self.on_blocks(bs, source, &mut out),
                    HostInput::StoreBlob { from, blob } => self.on_store(from, blob, &mut out),
                    HostInput::Ack { digest, confirmation } => {
                        let key = self
                            .chain
                            .mc
                            .node_list
                            .get(confirmation.index as usize)
                            .filter(|e| e.address == confirmation.node)
                            .map(|e| e.key.verify);
                        if let Some(key) = key {
                            for r in self.rounds.values_mut() {
                                for d in r.all().filter(|d| d.digest == digest) {
                                    d.on_ack(confirmation.clone(), &key);
                                }
                            }
                        }
                        self.finish_rounds(&mut out);
                    }
                    HostInput::Tick => {
                        let now = self.now;
                        let expired: Vec<u64> =
                            self.rounds.iter().filter(|(_, r)| r.deadline < now).map(|(k, _)| *k).collect();
                        for round in expired {
                            self.rounds.remove(&round);
                            let reason = "insufficient confirmations".to_string();
                            out.push(EnclaveOutput::Event(EnclaveEvent::RoundAbandoned { round, reason }));
                        }
                    }
                    HostInput::Provision(sealed) => match rotation::open_provision(&sealed, &self.keyring.node_keys) {
                        Ok(keys) => {
                            for k in keys {
                                let epoch = k.epoch();
                                if self.install(k) {
                                    out.push(EnclaveOutput::Event(EnclaveEvent::KeyAdopted { epoch }));
                                }
                            }
                        }
                        Err(e) => out.push(EnclaveOutput::Event(EnclaveEvent::Malformed { reason: e.to_string() })),
                    },
                    HostInput::Attest { node_key, operator } => {
                        let signature =
                            sign(&self.keyring.node_keys.signing, &attestation_message(&node_key, &operator));
                        let keys: Vec<&MgmtKeys> = self.keyring.mgmt.values().collect();
                        let mut rng = DetRng::from_seed(
                            hash_parts(&[b"racetee/provision", &self.keyring.seed, &codec::encode(&node_key)]).0,
                        );
                        let provision = rotation::seal_provision(&keys, &node_key, &mut rng);
                        out.push(EnclaveOutput::Attestation { operator, signature, provision });
                    }
                }
            }
        }
        out.iter().map(EnclaveOutput::encode).collect()
    }

    fn on_blocks(&mut self, blocks: Vec<Block>, source: &mut dyn BlobSource, out: &mut Vec<EnclaveOutput>) {
        let next = |c: &ChainState| c.height().map_or(0, |h| h + 1);
        for b in blocks {
            if b.number() >= next(&self.chain) {
                self.pending_blocks.insert(b.number(), b);
            }
        }
        let mut applied = false;
        while let Some(b) = self.pending_blocks.remove(&next(&self.chain)) {
            let parent = self.chain.height().and_then(|h| self.chain.canonical_hash(h)).unwrap_or_default();
            match verify_block(&b, &parent, &self.config.genesis_hash) {
                Ok(()) => {
                    self.chain.apply_block(b.number(), b.hash, &b.transactions);
                    self.maintain_keys(source, out);
                    applied = true;
                }
                Err(e) => {
                    out.push(EnclaveOutput::Event(EnclaveEvent::BlockRejected { number: b.number(), reason: e.to_string() }))
                }
            }
        }
        if applied {
            self.select_and_run(source, out);
        }
    }

    /// Adopts newly announced request-key epochs and erases retired ones.
    fn maintain_keys(&mut self, source: &mut dyn BlobSource, out: &mut Vec<EnclaveOutput>) {
        let leb = self.chain.mc.leb.number;
        let records = self.chain.mc.tx_keys.clone();
        for r in &records {
            let epoch = r.public.epoch;
            let retired = r.expires_at.is_some_and(|x| x <= leb);
            if retired {
                if self.keyring.mgmt.remove(&epoch).is_some() {
                    self.cache.clear();
                }
                continue;
            }
            if self.keyring.mgmt.contains_key(&epoch) {
                continue;
            }
            let own = self.candidates.get(&epoch).and_then(|c| c.iter().find(|k| k.public() == r.public)).cloned();
            let adopted = own.or_else(|| {
                let blob = source.fetch(&r.envelope?)?;
                rotation::open_envelope(&blob, &self.keyring.operator, &self.keyring.node_keys)
                    .ok()
                    .filter(|k| k.public() == r.public)
            });
            match adopted {
                Some(k) => {
                    self.install(k);
                    self.candidates.retain(|e, _| *e > epoch);
                    out.push(EnclaveOutput::Event(EnclaveEvent::KeyAdopted { epoch }));
                }
                None => {
                    if self.missing_reported.insert(epoch) {
                        out.push(EnclaveOutput::Event(EnclaveEvent::KeyUnavailable { epoch }));
                    }
                }
            }
        }
    }

    fn select_and_run(&mut self, source: &mut dyn BlobSource, out: &mut Vec<EnclaveOutput>) {
        let Some(head) = self.chain.height() else { return };
        let Some(me) = self.chain.mc.node_index(&self.keyring.operator) else { return };
        let n = self.chain.mc.node_list.len() as u64;
        let hash = self.chain.canonical_hash(head).expect("head applied");
        if !selection::am_i_selected(me as u64, &hash, n, self.config.committee) {
            return;
        }
        let start = self.chain.mc.leb;
        out.push(EnclaveOutput::Event(EnclaveEvent::Selected { round: head, start: start.number }));
        if let Err(reason) = self.run_round(BlockRef { number: head, hash }, source, out) {
            out.push(EnclaveOutput::Event(EnclaveEvent::RoundAbandoned { round: head, reason }));
        }
    }

    fn run_round(&mut self, end: BlockRef, source: &mut dyn BlobSource, out: &mut Vec<EnclaveOutput>) -> Result<(), String> {
        let round = end.number;
        let start = self.chain.mc.leb;
        if end.number <= start.number {
            return Ok(());
        }
        let cur = self.chain.mc.current_tx_key().ok_or("no request key on chain")?.clone();
        let epoch = cur.public.epoch;
        let Some(cur_keys) = self.keyring.mgmt.get(&epoch).cloned() else {
            out.push(EnclaveOutput::Event(EnclaveEvent::KeyUnavailable { epoch }));
            return Err(format!("request key epoch {epoch} not held"));
        };
        let rotate = end.number - cur.installed_at >= self.config.chain.mkrp;
        if !rotate && !self.config.publish_empty && exec::collect_requests(&self.chain, start.number, end.number).is_empty() {
            let reason = "no requests in range".to_string();
            out.push(EnclaveOutput::Event(EnclaveEvent::RoundSkipped { round, reason }));
            return Ok(());
        }
        let new_keys = rotate.then(|| MgmtKeys::generate(epoch + 1, &mut self.rng("rotation", round)));
        let info_key = new_keys.as_ref().map_or(&cur_keys.k_inf, |k| &k.k_inf).clone();
        let (range, secrets) = exec::execute_range(
            &self.chain,
            &self.keyring.mgmt,
            source,
            &mut self.cache,
            self.config.vm,
            start.number,
            end.number,
            &info_key,
            rotate,
        )
        .map_err(|e| {
            if let RangeError::Unavailable(digest) = e {
                out.push(EnclaveOutput::Event(EnclaveEvent::BlobUnavailable { digest }));
            }
            e.to_string()
        })?;
        self.secrets.extend(secrets);

        let envelope = new_keys.as_ref().map(|k| {
            let mut rng = self.rng("envelope", round);
            rotation::build_envelope(k, &self.chain.mc.node_list, &self.keyring.operator, &mut rng)
        });
        if let Some(k) = new_keys.clone() {
            self.register_mgmt_secret(&k);
            self.candidates.entry(k.epoch()).or_default().push(k);
        }

        let n = self.chain.mc.node_list.len();
        let (s, t) = (self.config.chain.rsts_subnet, self.config.chain.rsts_threshold);
        let deadline = self.now + self.config.rsts_timeout;
        let disseminate = |blob: &StorageBlob, out: &mut Vec<EnclaveOutput>| -> Result<Dissemination, String> {
            let subnet = select_subnet(&subnet_seed(&end.hash, &blob.digest), n, s).map_err(|e| e.to_string())?;
            let mut d = Dissemination::new(blob.digest, subnet.clone(), t, deadline);
            for i in subnet {
                let node = &self.chain.mc.node_list[i as usize];
                if node.address == self.keyring.operator {
                    out.push(EnclaveOutput::StoreLocal(blob.clone()));
                    let c = sign_ack(&self.keyring.node_keys.signing, i, node.address, &blob.digest);
                    d.on_ack(c, &node.key.verify);
                } else {
                    out.push(EnclaveOutput::SendBlob { to: node.address, blob: blob.clone() });
                }
            }
            Ok(d)
        };
        let mut blobs = Vec::new();
        for b in &range.blobs {
            blobs.push(disseminate(b, out)?);
        }
        let envelope = match &envelope {
            Some(b) => Some(disseminate(b, out)?),
            None => None,
        };
        let body = PublishBody {
            start,
            end,
            outputs: range.outputs,
            rotation: new_keys.map(|k| k.public()),
            storage_receipt: ReceiptBundle::default(),
        };
        if let Some(k) = body.rotation {
            out.push(EnclaveOutput::Event(EnclaveEvent::Rotated { round, epoch: k.epoch }));
        }
        self.rounds.insert(round, PendingRound { body, blobs, envelope, deadline });
        self.finish_rounds(out);
        Ok(())
    }

    /// Signs and emits every round whose receipts are complete.
    fn finish_rounds(&mut self, out: &mut Vec<EnclaveOutput>) {
        let done: Vec<u64> = self.rounds.iter().filter(|(_, r)| r.is_complete()).map(|(k, _)| *k).collect();
        for round in done {
            let r = self.rounds.remove(&round).expect("listed");
            let mut body = r.body;
            let receipt = |d: &Dissemination| d.receipt().expect("complete");
            body.storage_receipt =
                ReceiptBundle { blobs: r.blobs.iter().map(receipt).collect(), key_envelope: r.envelope.as_ref().map(receipt) };
            let signature = sign(&self.keyring.node_keys.signing, &body.signing_bytes());
            out.push(EnclaveOutput::Publish { round, payload: PublishPayload { body, signature } });
        }
    }

    fn on_store(&mut self, from: Address, blob: StorageBlob, out: &mut Vec<EnclaveOutput>) {
        if !blob.is_intact() {
            out.push(EnclaveOutput::Event(EnclaveEvent::Malformed { reason: "blob digest mismatch".into() }));
            return;
        }
        let Some(i) = self.chain.mc.node_index(&self.keyring.operator) else { return };
        let confirmation = sign_ack(&self.keyring.node_keys.signing, i as u32, self.keyring.operator, &blob.digest);
        out.push(EnclaveOutput::Ack { to: from, digest: blob.digest, confirmation });
    }
}
