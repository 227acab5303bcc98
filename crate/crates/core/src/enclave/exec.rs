//! Block-range execution: every deploy and invoke in `(start, end]`, in
//! global order, against contract data loaded lazily from storage.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::codec;
use crate::crypto::{
    aead_decrypt, aead_encrypt, hash_parts, pk_decrypt, AssociatedData, Ciphertext, CryptoError, Digest,
    KeyRole, RequestKeyPair, SymmetricKey,
};
use crate::onchain::{
    ChainState, ContractHashes, ContractOutput, Deployment, PcRequest, RejectionMarker, ResultPayload,
    ResultRecord,
};
use crate::storage::{BlobKind, StorageBlob};
use crate::types::{Address, RequestId};
use crate::vm::{self, Call, ContractLoader, ContractProgram, KvState, LoadedContract, Outcome, VmConfig, VmError};

use super::client::{seal_result, RequestError, ResultPlain};
use super::info::{DeployConfig, InfoP};
use super::rotation::MgmtKeys;
use super::BlobSource;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RangeError {
    #[error("blob {0} unavailable")]
    Unavailable(Digest),
    #[error("blob {0} does not decrypt: {1}")]
    Corrupt(Digest, String),
}

/// Plaintext of stored blobs, keyed by ciphertext digest.
pub type PlainCache = BTreeMap<Digest, Vec<u8>>;

pub(crate) type Secrets = Vec<(String, Vec<u8>)>;

pub(crate) struct RangeOutput {
    pub outputs: Vec<ContractOutput>,
    /// New ciphertexts the chain does not yet reference, sorted by digest.
    pub blobs: Vec<StorageBlob>,
}

enum KeyLookup<'k> {
    Valid(&'k RequestKeyPair),
    Expired(&'k RequestKeyPair),
    Missing(RejectionMarker),
}

fn request_key<'k>(chain: &ChainState, mgmt: &'k BTreeMap<u64, MgmtKeys>, epoch: u64, block: u64) -> KeyLookup<'k> {
    let record = chain.mc.tx_key(epoch);
    match (mgmt.get(&epoch), record) {
        (Some(k), Some(r)) if r.valid_at(block) => KeyLookup::Valid(&k.kp_tx),
        (Some(k), Some(_)) => KeyLookup::Expired(&k.kp_tx),
        (None, Some(r)) if r.expires_at.is_some_and(|x| x < block) => KeyLookup::Missing(RejectionMarker::StaleKey),
        _ => KeyLookup::Missing(RejectionMarker::Undecryptable),
    }
}

struct Slot {
    info: InfoP,
    program: ContractProgram,
    state: KvState,
}

pub(crate) struct Workspace<'a> {
    chain: &'a ChainState,
    mgmt: &'a BTreeMap<u64, MgmtKeys>,
    source: &'a mut dyn BlobSource,
    cache: &'a mut PlainCache,
    vm: VmConfig,
    slots: BTreeMap<Address, Slot>,
    results: BTreeMap<Address, Vec<ResultRecord>>,
    events: BTreeMap<Address, Vec<Vec<u8>>>,
    failed: Option<RangeError>,
    pub secrets: Secrets,
}

fn open_blob(
    source: &mut dyn BlobSource,
    cache: &mut PlainCache,
    digest: &Digest,
    decrypt: impl FnOnce(&Ciphertext) -> Result<Vec<u8>, CryptoError>,
) -> Result<Vec<u8>, RangeError> {
    if let Some(p) = cache.get(digest) {
        return Ok(p.clone());
    }
    let blob = source.fetch(digest).filter(|b| b.digest == *digest && b.is_intact());
    let blob = blob.ok_or(RangeError::Unavailable(*digest))?;
    let plain = decrypt(&Ciphertext(blob.ciphertext)).map_err(|e| RangeError::Corrupt(*digest, e.to_string()))?;
    cache.insert(*digest, plain.clone());
    Ok(plain)
}

fn decode_blob<T: serde::de::DeserializeOwned>(d: &Digest, bytes: &[u8]) -> Result<T, RangeError> {
    codec::decode(bytes).map_err(|e| RangeError::Corrupt(*d, e.to_string()))
}

impl<'a> Workspace<'a> {
    pub fn new(
        chain: &'a ChainState,
        mgmt: &'a BTreeMap<u64, MgmtKeys>,
        source: &'a mut dyn BlobSource,
        cache: &'a mut PlainCache,
        vm: VmConfig,
    ) -> Self {
        Self {
            chain,
            mgmt,
            source,
            cache,
            vm,
            slots: BTreeMap::new(),
            results: BTreeMap::new(),
            events: BTreeMap::new(),
            failed: None,
            secrets: Vec::new(),
        }
    }

    fn secret(&mut self, label: String, bytes: Vec<u8>) {
        self.secrets.push((label, bytes));
    }

    fn load_slot(&mut self, a: &Address) -> Result<bool, RangeError> {
        if self.slots.contains_key(a) {
            return Ok(true);
        }
        let Some(h) = self.chain.mc.hashes(a) else { return Ok(false) };
        let mgmt = self.mgmt;
        let info_plain = open_blob(self.source, self.cache, &h.info, |ct| {
            let e = ct.epoch().ok_or(CryptoError::Malformed)?;
            let k = mgmt.get(&e).ok_or(CryptoError::Malformed)?;
            aead_decrypt(&k.k_inf, ct, &AssociatedData::new(*a, e, KeyRole::Info))
        })?;
        let info: InfoP = decode_blob(&h.info, &info_plain)?;
        let code_plain = open_blob(self.source, self.cache, &h.code, |ct| {
            aead_decrypt(&info.k_code, ct, &AssociatedData::new(*a, 0, KeyRole::Code))
        })?;
        let program: ContractProgram = decode_blob(&h.code, &code_plain)?;
        let state_plain = open_blob(self.source, self.cache, &h.state, |ct| {
            aead_decrypt(&info.k_st, ct, &AssociatedData::new(*a, info.k_st.epoch, KeyRole::State))
        })?;
        let state: KvState = decode_blob(&h.state, &state_plain)?;
        self.slots.insert(*a, Slot { info, program, state });
        Ok(true)
    }

    fn reject(&mut self, contract: Address, request: RequestId, m: RejectionMarker) {
        let r = ResultRecord { request, payload: ResultPayload::Rejected(m) };
        self.results.entry(contract).or_default().push(r);
    }

    pub fn deploy(&mut self, address: Address, dep: &Deployment) {
        let kp = match request_key(self.chain, self.mgmt, dep.enc_code.epoch, dep.request.block) {
            KeyLookup::Valid(k) => k,
            KeyLookup::Expired(_) => return self.reject(address, dep.request, RejectionMarker::StaleKey),
            KeyLookup::Missing(m) => return self.reject(address, dep.request, m),
        };
        let (Ok(code), Ok(config)) = (pk_decrypt(kp, &dep.enc_code), pk_decrypt(kp, &dep.enc_config)) else {
            return self.reject(address, dep.request, RejectionMarker::Undecryptable);
        };
        let parsed = codec::decode::<ContractProgram>(&code).ok().zip(codec::decode::<DeployConfig>(&config).ok());
        let Some((program, config)) = parsed.filter(|(_, c)| c.ckrp >= 1) else {
            return self.reject(address, dep.request, RejectionMarker::InvalidDeployment);
        };
        let (state, _) = vm::deploy(&program, self.vm, dep.sender, address);
        let Ok(state) = state else {
            return self.reject(address, dep.request, RejectionMarker::InvalidDeployment);
        };
        let seed = hash_parts(&[b"racetee/key-seed", &kp.secret_bytes(), &address.0]).0;
        let info = InfoP::new(dep.sender, config, seed, &address);
        self.secret(format!("code/{address}"), code);
        self.secret(format!("key_seed/{address}"), seed.to_vec());
        self.secret(format!("k_code/{address}"), info.k_code.bytes().to_vec());
        self.secret(format!("k_st/{address}/0"), info.k_st.bytes().to_vec());
        self.slots.insert(address, Slot { info, program, state });
    }

    /// Returns false if a blob failure aborted the range.
    pub fn invoke(&mut self, contract: Address, req: &PcRequest) -> bool {
        let (kp, stale) = match request_key(self.chain, self.mgmt, req.enc_result_key.epoch, req.id.block) {
            KeyLookup::Valid(k) => (k, false),
            KeyLookup::Expired(k) => (k, true),
            KeyLookup::Missing(m) => {
                self.reject(contract, req.id, m);
                return true;
            }
        };
        let k_res = match pk_decrypt(kp, &req.enc_result_key).map(<[u8; 32]>::try_from) {
            Ok(Ok(b)) => SymmetricKey::from_bytes(b, KeyRole::Result, 0),
            _ => {
                self.reject(contract, req.id, RejectionMarker::Undecryptable);
                return true;
            }
        };
        self.secret(format!("k_res/{}", req.id), k_res.bytes().to_vec());
        let (outcome, steps) = if stale {
            (Err(RequestError::StaleKey), 0)
        } else {
            match pk_decrypt(kp, &req.enc_input) {
                Err(_) => (Err(RequestError::BadInput("input does not decrypt".into())), 0),
                Ok(input) => match codec::decode::<Call>(&input) {
                    Err(_) => (Err(RequestError::BadInput("input is not a call".into())), 0),
                    Ok(call) => {
                        self.secret(format!("input/{}", req.id), input);
                        let cfg = self.vm;
                        let (r, used) = vm::invoke(self, cfg, req.sender, contract, &call);
                        if self.failed.is_some() {
                            return false;
                        }
                        match r {
                            Ok(o) => {
                                let v = o.value.clone();
                                self.commit(o);
                                (Ok(v), used)
                            }
                            Err(e) => (Err(RequestError::Vm(e)), used),
                        }
                    }
                },
            }
        };
        let plain = ResultPlain { request: req.id, outcome, steps };
        self.secret(format!("result/{}", req.id), codec::encode(&plain));
        let ct = seal_result(&k_res, &contract, &plain).expect("result key has the result role");
        let r = ResultRecord { request: req.id, payload: ResultPayload::Encrypted(ct) };
        self.results.entry(contract).or_default().push(r);
        true
    }

    /// State keys rotate here, at transaction commit, never mid-chain.
    fn commit(&mut self, o: Outcome) {
        for (a, st) in o.states {
            if let Some(s) = self.slots.get_mut(&a) {
                s.state = st;
            }
        }
        for (a, n) in o.calls {
            if let Some(s) = self.slots.get_mut(&a) {
                if s.info.record_invocations(n, &a) {
                    let label = format!("k_st/{a}/{}", s.info.k_st.epoch);
                    let bytes = s.info.k_st.bytes().to_vec();
                    self.secret(label, bytes);
                }
            }
        }
        for (a, e) in o.events {
            self.events.entry(a).or_default().push(e);
        }
    }

    pub fn failure(&mut self) -> Option<RangeError> {
        self.failed.take()
    }

    /// Re-encrypts every touched contract. With `load_all`, every known
    /// contract is loaded first so its info moves to `info_key`.
    pub fn finish(mut self, info_key: &SymmetricKey, load_all: bool) -> Result<(RangeOutput, Secrets), RangeError> {
        if load_all {
            let all: Vec<Address> = self.chain.mc.prog_list.keys().copied().collect();
            for a in all {
                self.load_slot(&a)?;
            }
        }
        let addrs: BTreeSet<Address> =
            self.slots.keys().chain(self.results.keys()).chain(self.events.keys()).copied().collect();
        let mut outputs = Vec::new();
        let mut blobs: BTreeMap<Digest, StorageBlob> = BTreeMap::new();
        for a in addrs {
            let hashes = match self.slots.get(&a) {
                None => None,
                Some(s) => {
                    let enc = |key: &SymmetricKey, plain: &[u8], kind| {
                        let ad = AssociatedData::new(a, key.epoch, key.role);
                        let ct = aead_encrypt(key, plain, &ad).expect("roles match");
                        StorageBlob::new(kind, ct.0)
                    };
                    let info_plain = codec::encode(&s.info);
                    let code_plain = codec::encode(&s.program);
                    let state_plain = codec::encode(&s.state);
                    let bi = enc(info_key, &info_plain, BlobKind::Info);
                    let bc = enc(&s.info.k_code, &code_plain, BlobKind::Code);
                    let bs = enc(&s.info.k_st, &state_plain, BlobKind::State);
                    let h = ContractHashes { info: bi.digest, code: bc.digest, state: bs.digest };
                    let old = self.chain.mc.hashes(&a);
                    for (b, plain) in [(bi, info_plain.clone()), (bc, code_plain), (bs, state_plain.clone())] {
                        self.cache.insert(b.digest, plain);
                        if old.is_none_or(|o| ![o.info, o.code, o.state].contains(&b.digest)) {
                            blobs.insert(b.digest, b);
                        }
                    }
                    self.secrets.push((format!("info/{a}"), info_plain));
                    self.secrets.push((format!("state/{a}"), state_plain));
                    (old != Some(h)).then_some(h)
                }
            };
            let mut results = self.results.remove(&a).unwrap_or_default();
            results.sort_by_key(|r| r.request);
            let public_events = self.events.remove(&a).unwrap_or_default();
            if hashes.is_some() || !results.is_empty() || !public_events.is_empty() {
                outputs.push(ContractOutput { address: a, hashes, results, public_events });
            }
        }
        let out = RangeOutput { outputs, blobs: blobs.into_values().collect() };
        Ok((out, self.secrets))
    }
}

impl ContractLoader for Workspace<'_> {
    fn load(&mut self, address: &Address) -> Result<Option<LoadedContract>, VmError> {
        match self.load_slot(address) {
            Ok(false) => Ok(None),
            Ok(true) => {
                let s = &self.slots[address];
                Ok(Some(LoadedContract { program: s.program.clone(), acl: s.info.acl.clone(), state: s.state.clone() }))
            }
            Err(e) => {
                let msg = e.to_string();
                self.failed.get_or_insert(e);
                Err(VmError::Unavailable(msg))
            }
        }
    }
}

/// Every deploy and invoke with `start < block <= end`, in global order.
pub(crate) enum Request<'c> {
    Deploy(Address, &'c Deployment),
    Invoke(Address, &'c PcRequest),
}

impl Request<'_> {
    fn id(&self) -> RequestId {
        match self {
            Request::Deploy(_, d) => d.request,
            Request::Invoke(_, r) => r.id,
        }
    }
}

pub(crate) fn collect_requests(chain: &ChainState, start: u64, end: u64) -> Vec<Request<'_>> {
    let mut out = Vec::new();
    for (a, pc) in &chain.pcs {
        let b = pc.deployment.request.block;
        if b > start && b <= end {
            out.push(Request::Deploy(*a, &pc.deployment));
        }
        out.extend(pc.requests_in(start, end).map(|r| Request::Invoke(*a, r)));
    }
    out.sort_by_key(Request::id);
    out
}

/// Runs the range. `info_key` encrypts the info records written back; it is
/// a fresh key when the round rotates, and then every contract is rewritten.
#[allow(clippy::too_many_arguments)]
pub(crate) fn execute_range(
    chain: &ChainState,
    mgmt: &BTreeMap<u64, MgmtKeys>,
    source: &mut dyn BlobSource,
    cache: &mut PlainCache,
    vm: VmConfig,
    start: u64,
    end: u64,
    info_key: &SymmetricKey,
    rotating: bool,
) -> Result<(RangeOutput, Secrets), RangeError> {
    let requests = collect_requests(chain, start, end);
    let mut ws = Workspace::new(chain, mgmt, source, cache, vm);
    for r in requests {
        match r {
            Request::Deploy(a, d) => ws.deploy(a, d),
            Request::Invoke(a, q) => {
                ws.invoke(a, q);
            }
        }
        if let Some(e) = ws.failure() {
            return Err(e);
        }
    }
    ws.finish(info_key, rotating)
}

pub(crate) type ContractView = (InfoP, ContractProgram, KvState);

/// Decrypts every contract the chain references.
pub(crate) fn load_all(
    chain: &ChainState,
    mgmt: &BTreeMap<u64, MgmtKeys>,
    source: &mut dyn BlobSource,
    cache: &mut PlainCache,
) -> Result<BTreeMap<Address, ContractView>, RangeError> {
    let mut ws = Workspace::new(chain, mgmt, source, cache, VmConfig::default());
    for a in chain.mc.prog_list.keys() {
        ws.load_slot(a)?;
    }
    Ok(ws.slots.into_iter().map(|(a, s)| (a, (s.info, s.program, s.state))).collect())
}
