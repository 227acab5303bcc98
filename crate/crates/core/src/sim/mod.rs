//! Discrete-event simulation: a ledger, host-wrapped enclaves, users
//! following a script, a bounded-delay network and the adversary hooks.
//! Events run in (tick, insertion) order and every random choice comes
//! from the run seed, so a run is a pure function of (scenario, seed).

pub mod report;
pub mod scenario;
pub mod taint;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Serialize;

use crate::codec;
use crate::crypto::{hash, hash_parts, Digest, SigningKeyPair};
use crate::enclave::client::{open_result, seal_deploy, seal_invoke};
use crate::enclave::exec::RangeError;
use crate::enclave::info::{DeployConfig, InfoP};
use crate::enclave::messages::{EnclaveEvent, EnclaveOutput, HostInput, HostMessage};
use crate::enclave::selection::select_committee;
use crate::enclave::{BlobSource, Enclave, EnclaveConfig, SealedKeyring};
use crate::crypto::SymmetricKey;
use crate::ledger::{Block, Ledger, SignedTransaction, TxBody};
use crate::onchain::{ChainParams, ResultPayload, ResultStatus, TxEffect, TxRejection};
use crate::rng::DetRng;
use crate::storage::{BlobStore, StorageBlob};
use crate::types::{Address, RequestId};
use crate::vm::{Acl, Call, ContractProgram, KvState, Value, VmConfig};

pub use report::RunReport;
pub use scenario::{Behavior, Scenario, ScenarioError, ScriptEntry};
pub use taint::{TaintLedger, TaintViolation};

use report::{
    Checkpoint, DisseminationRecord, KeyEpochRecord, NodeSummary, PublishRecord, RemunerationRecord, RequestRecord,
    RoundRecord,
};
use scenario::{AclSpec, Arg};

/// Account key of a scripted user. Depends on the name only, so user and
/// contract addresses are the same under every seed.
pub fn user_key(name: &str) -> SigningKeyPair {
    SigningKeyPair::from_secret_bytes(&hash_parts(&[b"racetee/user", name.as_bytes()]).0)
}

#[derive(Clone, Debug)]
enum Event {
    ProduceBlock,
    Script(usize),
    ToLedger(Box<SignedTransaction>),
    ToNode { node: usize, input: HostInput, sent: u64, honest: bool },
    Crash(usize),
    Restart(usize),
}

struct Host {
    operator: SigningKeyPair,
    address: Address,
    nonce: u64,
    enclave_seed: [u8; 32],
    behaviors: Vec<Behavior>,
    /// Part of the deployment (initial nodes, or registered by script).
    active: bool,
    up: bool,
    sealed: Option<SealedKeyring>,
    store: BlobStore,
    next_block: u64,
    chain_fifo: u64,
    ledger_fifo: u64,
    acked: BTreeSet<Digest>,
    restart_at_block: Option<u64>,
    selected: Vec<u64>,
    abandoned: Vec<u64>,
    rejected_blocks: usize,
    fetch_failures: usize,
    publishes: usize,
}

impl Host {
    fn has(&self, f: impl Fn(&Behavior) -> bool) -> bool {
        self.behaviors.iter().any(f)
    }

    fn withholds(&self) -> bool {
        self.has(|b| matches!(b, Behavior::WithholdStorage))
    }

    fn honest(&self) -> bool {
        self.behaviors.is_empty()
    }
}

/// Blob lookup for one enclave: its own host store first, then reachable peers.
/// Withholding hosts serve only each other.
struct Fetcher<'a> {
    hosts: &'a [Host],
    me: usize,
    failures: usize,
}

impl BlobSource for Fetcher<'_> {
    fn fetch(&mut self, digest: &Digest) -> Option<StorageBlob> {
        let me = &self.hosts[self.me];
        if let Some(b) = me.store.get(digest) {
            return Some(b.clone());
        }
        for (j, h) in self.hosts.iter().enumerate() {
            if j == self.me || !h.up || (h.withholds() && !me.withholds()) {
                continue;
            }
            if let Some(b) = h.store.get(digest) {
                return Some(b.clone());
            }
        }
        self.failures += 1;
        None
    }
}

struct User {
    key: SigningKeyPair,
    address: Address,
    nonce: u64,
}

struct Tracked {
    record: RequestRecord,
    id: Option<RequestId>,
    contract: Option<Address>,
    k_res: Option<SymmetricKey>,
}

#[derive(Serialize)]
struct ChainLine<'a> {
    number: u64,
    hash: Digest,
    parent: Digest,
    tick: u64,
    transactions: Vec<ChainTx<'a>>,
}

#[derive(Serialize)]
struct ChainTx<'a> {
    index: u32,
    sender: String,
    kind: &'a str,
    nonce: u64,
    digest: Digest,
    cost: u64,
    outcome: String,
}

pub struct Simulation {
    sc: Scenario,
    seed: u64,
    root: DetRng,
    net_rng: DetRng,
    fault_rng: DetRng,
    now: u64,
    seq: u64,
    queue: BTreeMap<(u64, u64), Event>,
    ledger: Ledger,
    config: EnclaveConfig,
    hosts: Vec<Host>,
    enclaves: Vec<Option<Enclave>>,
    by_address: BTreeMap<Address, usize>,
    users: BTreeMap<String, User>,
    names: BTreeMap<String, Address>,
    requests: Vec<Tracked>,
    request_by_tx: BTreeMap<Digest, usize>,
    publishes: Vec<PublishRecord>,
    publish_by_tx: BTreeMap<Digest, usize>,
    rounds: Vec<RoundRecord>,
    disseminations: Vec<DisseminationRecord>,
    dissemination_index: BTreeMap<(usize, Digest), usize>,
    checkpoints: Vec<Checkpoint>,
    taint: TaintLedger,
    max_honest_delay: u64,
    delivery_violations: Vec<String>,
    log: Vec<String>,
    finished: Option<RunReport>,
}

impl Simulation {
    /// Builds the genesis chain (bootstrap node plus attested peers) and
    /// schedules the script. `seed` overrides the scenario's seed.
    pub fn new(sc: Scenario, seed: Option<u64>) -> Self {
        let seed = seed.unwrap_or(sc.seed);
        let root = DetRng::from_u64(seed);
        let params = ChainParams {
            mkrp: if sc.mkrp == 0 { u64::MAX } else { sc.mkrp },
            transition_window: sc.transition_window,
            min_deposit: sc.fees.min_deposit as u128,
            request_fee: sc.fees.request as u128,
            base_reward: sc.fees.base_reward as u128,
            rsts_subnet: sc.rsts.subnet,
            rsts_threshold: sc.rsts.threshold,
            initial_balance: sc.fees.initial_balance as u128,
        };
        let mut config = EnclaveConfig {
            committee: sc.committee,
            vm: VmConfig { step_limit: sc.exec.step_limit, max_call_depth: sc.exec.max_call_depth },
            publish_empty: sc.exec.publish_empty,
            rsts_timeout: sc.rsts.timeout,
            chain: params.clone(),
            genesis_hash: Digest::default(),
        };
        let mut taint = TaintLedger::new(sc.taint.min_match);
        let mut hosts = Vec::new();
        let mut by_address = BTreeMap::new();
        for i in 0..sc.total_nodes() {
            let operator = SigningKeyPair::from_secret_bytes(&root.split_indexed("operator", i as u64).bytes32());
            let address = Address::from_public_key(&operator.public().0);
            taint.register(format!("operator/{i}"), &operator.secret_bytes());
            by_address.insert(address, i);
            hosts.push(Host {
                operator,
                address,
                nonce: 0,
                enclave_seed: root.split_indexed("enclave", i as u64).bytes32(),
                behaviors: sc.behaviors(i),
                active: i < sc.nodes,
                up: i < sc.nodes,
                sealed: None,
                store: BlobStore::default(),
                next_block: 0,
                chain_fifo: 0,
                ledger_fifo: 0,
                acked: BTreeSet::new(),
                restart_at_block: None,
                selected: Vec::new(),
                abandoned: Vec::new(),
                rejected_blocks: 0,
                fetch_failures: 0,
                publishes: 0,
            });
        }

        // Genesis: node 0 bootstraps, every other node is attested by node 0.
        let mut enclaves: Vec<Option<Enclave>> = Vec::new();
        let mut genesis_txs = Vec::new();
        let deposit = params.min_deposit;
        for i in 0..sc.nodes {
            let h = &mut hosts[i];
            let mut e = Enclave::launch(config.clone(), h.enclave_seed, h.address);
            let payload = if i == 0 {
                e.bootstrap_registration(deposit)
            } else {
                let endorser: &mut Enclave = enclaves[0].as_mut().expect("bootstrap enclave");
                let (signature, provision) = attest(endorser, &e, h.address, &mut taint);
                let msg = HostMessage { now: 0, input: HostInput::Provision(provision) }.encode();
                taint.observe(format!("wire/provision/{i}"), &msg);
                e.handle(&msg, &mut crate::enclave::NoBlobs);
                e.registration(hosts[0].address, signature, deposit)
            };
            let h = &mut hosts[i];
            h.nonce += 1;
            genesis_txs.push(SignedTransaction::new(&h.operator, &TxBody::Register(payload), h.nonce));
            enclaves.push(Some(e));
        }
        let ledger = Ledger::genesis(params, genesis_txs).expect("genesis registrations are well formed");
        config.genesis_hash = ledger.blocks()[0].hash;
        for slot in enclaves.iter_mut() {
            let mut old = slot.take().expect("launched");
            for (id, bytes) in old.drain_secrets() {
                taint.register(id, &bytes);
            }
            *slot = Some(Enclave::resume(config.clone(), old.sealed()));
        }
        enclaves.resize_with(hosts.len(), || None);

        let mut names = BTreeMap::new();
        let mut users = BTreeMap::new();
        for u in &sc.users {
            let key = user_key(u);
            let address = Address::from_public_key(&key.public().0);
            taint.register(format!("user_key/{u}"), &key.secret_bytes());
            names.insert(u.clone(), address);
            users.insert(u.clone(), User { key, address, nonce: 0 });
        }

        let mut sim = Self {
            seed,
            net_rng: root.split("network"),
            fault_rng: root.split("faults"),
            root,
            now: 0,
            seq: 0,
            queue: BTreeMap::new(),
            ledger,
            config,
            hosts,
            enclaves,
            by_address,
            users,
            names,
            requests: Vec::new(),
            request_by_tx: BTreeMap::new(),
            publishes: Vec::new(),
            publish_by_tx: BTreeMap::new(),
            rounds: Vec::new(),
            disseminations: Vec::new(),
            dissemination_index: BTreeMap::new(),
            checkpoints: Vec::new(),
            taint,
            max_honest_delay: 0,
            delivery_violations: Vec::new(),
            log: Vec::new(),
            finished: None,
            sc,
        };
        sim.observe_block(0);
        for i in 0..sim.sc.nodes {
            sim.ship_chain(i);
        }
        let interval = sim.sc.block_interval;
        sim.schedule(interval, Event::ProduceBlock);
        for (i, e) in sim.sc.script.iter().enumerate() {
            let tick = (e.get_ref().block() - 1) * interval + 1;
            sim.queue.insert((tick, sim.seq), Event::Script(i));
            sim.seq += 1;
        }
        for i in 0..sim.hosts.len() {
            for b in sim.hosts[i].behaviors.clone() {
                match b {
                    Behavior::CrashAt { tick } => sim.schedule(tick, Event::Crash(i)),
                    Behavior::RestartAt { tick } => sim.schedule(tick, Event::Restart(i)),
                    _ => {}
                }
            }
        }
        sim
    }

    pub fn scenario(&self) -> &Scenario {
        &self.sc
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    /// Address bound to a user or contract name in the script.
    pub fn address_of(&self, name: &str) -> Option<Address> {
        self.names.get(name).copied()
    }

    /// Host-side store of node `i`.
    pub fn store(&self, i: usize) -> &BlobStore {
        &self.hosts[i].store
    }

    /// Every secret registered with the taint ledger, by label.
    pub fn secrets(&self) -> &[(String, Vec<u8>)] {
        self.taint.secrets()
    }

    /// Diagnostic log lines (fetch failures, refused submissions).
    pub fn log(&self) -> &[String] {
        &self.log
    }

    fn schedule(&mut self, tick: u64, e: Event) {
        self.queue.insert((tick, self.seq), e);
        self.seq += 1;
    }

    fn net_delay(&mut self) -> u64 {
        let n = &self.sc.network;
        let base = self.net_rng.range_inclusive(n.min_delay, n.max_delay);
        let jitter = if n.reorder_window > 0 { self.net_rng.range_inclusive(0, n.reorder_window) } else { 0 };
        (base + jitter).min(n.max_delay)
    }

    /// Runs to the scenario's end tick and returns the report.
    pub fn run(&mut self) -> &RunReport {
        if self.finished.is_none() {
            while let Some((&(tick, seq), _)) = self.queue.first_key_value() {
                if tick > self.sc.end_tick {
                    break;
                }
                let ev = self.queue.remove(&(tick, seq)).expect("present");
                self.now = tick;
                self.dispatch(ev);
            }
            let report = self.build_report();
            self.finished = Some(report);
        }
        self.finished.as_ref().expect("just built")
    }

    fn dispatch(&mut self, ev: Event) {
        match ev {
            Event::ProduceBlock => self.produce_block(),
            Event::Script(i) => self.script(i),
            Event::ToLedger(tx) => {
                let digest = tx.digest();
                if let Err(e) = self.ledger.submit(*tx) {
                    self.log.push(format!("tick {}: submission refused: {e}", self.now));
                    if let Some(&p) = self.publish_by_tx.get(&digest) {
                        self.publishes[p].reason = Some(format!("submit: {e}"));
                    }
                    if let Some(&r) = self.request_by_tx.get(&digest) {
                        self.requests[r].record.rejected = Some(format!("submit: {e}"));
                    }
                }
            }
            Event::ToNode { node, input, sent, honest } => {
                if honest {
                    let d = self.now - sent;
                    self.max_honest_delay = self.max_honest_delay.max(d);
                    if d > self.sc.network.max_delay {
                        self.delivery_violations.push(format!("message to node {node} delayed {d} ticks"));
                    }
                }
                if !self.hosts[node].up {
                    return;
                }
                if let HostInput::StoreBlob { blob, .. } = &input {
                    if blob.is_intact() {
                        self.hosts[node].store.put(blob.clone());
                    }
                }
                self.handle(node, input);
            }
            Event::Crash(i) => self.crash(i),
            Event::Restart(i) => self.restart(i),
        }
    }

    fn crash(&mut self, i: usize) {
        let h = &mut self.hosts[i];
        if !h.up {
            return;
        }
        h.up = false;
        if let Some(mut e) = self.enclaves[i].take() {
            for (id, bytes) in e.drain_secrets() {
                self.taint.register(id, &bytes);
            }
            h.sealed = Some(e.sealed());
        }
    }

    /// Relaunch from the sealed keyring; chain and contract data are
    /// rebuilt from blocks and storage.
    fn restart(&mut self, i: usize) {
        let h = &mut self.hosts[i];
        if h.up || !h.active {
            return;
        }
        let Some(sealed) = h.sealed.clone() else { return };
        h.up = true;
        h.next_block = 0;
        self.enclaves[i] = Some(Enclave::resume(self.config.clone(), sealed));
        self.ship_chain(i);
    }

    /// Sends node `i` every block it has not been given yet, subject to its
    /// host behaviours.
    fn ship_chain(&mut self, i: usize) {
        let head = self.ledger.chain_head().number;
        let h = &self.hosts[i];
        if !h.up || !h.active {
            return;
        }
        let depth = h.behaviors.iter().find_map(|b| match b {
            Behavior::StaleBlock { depth } => Some(*depth),
            _ => None,
        });
        let upto = match depth {
            Some(d) if head < d => return,
            Some(d) => head - d,
            None => head,
        };
        if h.next_block > upto {
            return;
        }
        let forge = h.has(|b| matches!(b, Behavior::ForgeBlocks));
        let honest = h.honest();
        let blocks: Vec<Block> = self.ledger.blocks()[h.next_block as usize..=upto as usize].to_vec();
        self.hosts[i].next_block = upto + 1;
        let at = (self.now + self.net_delay()).max(self.hosts[i].chain_fifo);
        self.hosts[i].chain_fifo = at;
        let sent = self.now;
        if forge {
            for b in blocks {
                if let Some(f) = forged(&b) {
                    self.schedule(at, Event::ToNode { node: i, input: HostInput::Blocks(vec![f]), sent, honest });
                }
                self.schedule(at, Event::ToNode { node: i, input: HostInput::Blocks(vec![b]), sent, honest });
            }
        } else {
            self.schedule(at, Event::ToNode { node: i, input: HostInput::Blocks(blocks), sent, honest });
        }
    }

    fn observe_block(&mut self, number: u64) {
        let block = &self.ledger.blocks()[number as usize];
        for (i, tx) in block.transactions.iter().enumerate() {
            self.taint.observe(format!("tx/{number}/{i}"), &codec::encode(tx));
        }
    }

    fn produce_block(&mut self) {
        let number = self.ledger.produce_block(self.now).number();
        self.observe_block(number);
        let block = self.ledger.blocks()[number as usize].clone();
        let outcomes = self.ledger.outcomes(number).expect("just produced").to_vec();
        for (tx, o) in block.transactions.iter().zip(&outcomes) {
            let digest = tx.digest();
            if let Some(&p) = self.publish_by_tx.get(&digest) {
                let rec = &mut self.publishes[p];
                rec.included_block = Some(number);
                rec.cost = Some(o.cost);
                match &o.result {
                    Ok(TxEffect::Published { rotation_epoch, .. }) => {
                        rec.accepted = true;
                        rec.rotation_epoch = *rotation_epoch;
                    }
                    Ok(_) => {}
                    Err(TxRejection::Publish(r)) => {
                        rec.reason = Some(r.label().to_string());
                        rec.freshness = r.is_freshness();
                    }
                    Err(e) => rec.reason = Some(e.to_string()),
                }
                if rec.accepted {
                    let mc = &self.ledger.state().mc;
                    let hashes_digest = hash(&codec::encode(&(&mc.prog_list, &mc.prog_codes, &mc.prog_states)));
                    self.checkpoints.push(Checkpoint { block: number, end: rec.end, hashes_digest });
                }
            }
            if let Some(&r) = self.request_by_tx.get(&digest) {
                let t = &mut self.requests[r];
                t.record.included_block = Some(number);
                t.record.request_cost = Some(o.cost);
                match &o.result {
                    Ok(TxEffect::Deployed { address, request }) => {
                        t.id = Some(*request);
                        t.contract = Some(*address);
                    }
                    Ok(TxEffect::Invoked { request, .. }) => t.id = Some(*request),
                    Ok(_) => {}
                    Err(e) => t.record.rejected = Some(e.to_string()),
                }
            }
        }
        self.collect_results(number);

        // Faults keyed to this block, then the round record.
        let state = self.ledger.state();
        let n = state.mc.node_list.len() as u64;
        let members: Vec<u64> =
            if n == 0 { Vec::new() } else { select_committee(&block.hash, n, self.sc.committee.min(n)).unwrap_or_default() };
        let member_hosts: Vec<usize> = members
            .iter()
            .filter_map(|&m| state.mc.node_list.get(m as usize).and_then(|e| self.by_address.get(&e.address)).copied())
            .collect();
        for &hi in &member_hosts {
            let hit = self.hosts[hi].has(|b| matches!(b, Behavior::CrashIfSelected { round } if *round == number));
            if hit && self.hosts[hi].up {
                self.crash(hi);
                self.hosts[hi].restart_at_block = Some(number + 1);
            }
        }
        for i in 0..self.hosts.len() {
            if self.hosts[i].restart_at_block == Some(number) {
                self.hosts[i].restart_at_block = None;
                self.restart(i);
            }
        }
        let all_down = !member_hosts.is_empty() && member_hosts.iter().all(|&h| !self.hosts[h].up);
        self.rounds.push(RoundRecord { block: number, committee: members, all_down, responded: false });

        for i in 0..self.hosts.len() {
            if !self.hosts[i].up || !self.hosts[i].active {
                continue;
            }
            self.handle(i, HostInput::Tick);
            let p = self.hosts[i].behaviors.iter().find_map(|b| match b {
                Behavior::Dropout { probability } => Some(*probability),
                _ => None,
            });
            if let Some(p) = p {
                let roll = self.fault_rng.split_indexed("dropout", number * 1_000_003 + i as u64).below(1 << 32);
                if (roll as f64) < p * (1u64 << 32) as f64 {
                    continue;
                }
            }
            self.ship_chain(i);
        }
        if (number + 1) * self.sc.block_interval <= self.sc.end_tick {
            self.schedule((number + 1) * self.sc.block_interval, Event::ProduceBlock);
        }
    }

    fn collect_results(&mut self, number: u64) {
        let state = self.ledger.state();
        for t in self.requests.iter_mut() {
            if t.record.ready_block.is_some() || t.record.rejected.is_some() {
                continue;
            }
            let (Some(id), Some(contract)) = (t.id, t.contract) else { continue };
            let ready = |t: &mut Tracked| {
                t.record.ready_block = Some(number);
                t.record.latency = t.record.included_block.map(|b| number - b);
            };
            match state.read_result(&contract, &id) {
                Ok(ResultStatus::Ready(ResultPayload::Rejected(m))) => {
                    t.record.outcome = Some(format!("rejected_{}", marker_label(&m)));
                    ready(t);
                }
                Ok(ResultStatus::Ready(ResultPayload::Encrypted(ct))) => {
                    t.record.result_cost = Some(crate::onchain::TX_BYTE_COST * ct.0.len() as u64);
                    match t.k_res.as_ref().map(|k| open_result(k, &contract, &ct)) {
                        Some(Ok(plain)) => {
                            t.record.steps = Some(plain.steps);
                            match plain.outcome {
                                Ok(v) => {
                                    t.record.outcome = Some("ok".into());
                                    t.record.result = Some(render(&v));
                                }
                                Err(e) => t.record.outcome = Some(e.label().to_string()),
                            }
                        }
                        _ => t.record.outcome = Some("undecryptable".into()),
                    }
                    ready(t);
                }
                _ => {
                    if t.k_res.is_none() && state.mc.prog_list.contains_key(&contract) {
                        t.record.outcome = Some("deployed".into());
                        ready(t);
                    }
                }
            }
        }
    }

    fn resolve(&self, a: &Arg) -> Value {
        match a {
            Arg::Int(i) if *i < 0 => Value::I128(*i as i128),
            Arg::Int(i) => Value::U128(*i as u128),
            Arg::Bool(b) => Value::Bool(*b),
            Arg::Text(s) => match s.strip_prefix('@') {
                Some(name) => Value::Addr(self.names[name]),
                None => Value::Bytes(hex::decode(s.trim_start_matches("0x")).expect("validated")),
            },
            Arg::List(xs) => Value::List(xs.iter().map(|x| self.resolve(x)).collect()),
        }
    }

    fn script(&mut self, index: usize) {
        let entry = self.sc.script[index].get_ref().clone();
        let mut rng = self.root.split_indexed("request", index as u64);
        match entry {
            ScriptEntry::Deploy { user, name, program, params, acl, ckrp, key_epoch, .. } => {
                let init_params: Vec<Value> = params.iter().map(|a| self.resolve(a)).collect();
                let acl = match acl {
                    AclSpec::Keyword(_) => Acl::Any,
                    AclSpec::Names(ns) => Acl::Only(ns.iter().map(|n| self.name_address(n)).collect()),
                };
                let program = ContractProgram { code_id: program, init_params };
                let mut record = self.new_record(index, &user, "deploy", &name, None, key_epoch);
                let Some(key) = self.request_key(key_epoch) else {
                    record.rejected = Some("no request key".into());
                    self.push_request(record, None, None, None);
                    return;
                };
                self.taint.register(format!("user/code/{name}"), &codec::encode(&program));
                let payload = seal_deploy(&key, &program, &DeployConfig { acl, ckrp }, &mut rng);
                let u = self.users.get_mut(&user).expect("validated user");
                u.nonce += 1;
                let address = Address::contract(&u.address, u.nonce);
                let tx = SignedTransaction::new(&u.key, &TxBody::DeployPC(payload), u.nonce);
                self.names.insert(name.clone(), address);
                self.push_request(record, Some(&tx), None, None);
                self.schedule(self.now, Event::ToLedger(Box::new(tx)));
            }
            ScriptEntry::Invoke { user, contract, function, args, key_epoch, .. } => {
                let values: Vec<Value> = args.iter().map(|a| self.resolve(a)).collect();
                for (j, v) in values.iter().enumerate() {
                    if let Value::Bytes(b) = v {
                        self.taint.register(format!("user/arg/{index}/{j}"), b);
                    }
                }
                let call = Call::new(&function, values);
                let target = self.names[&contract];
                let record = self.new_record(index, &user, "invoke", &contract, Some(function), key_epoch);
                let Some(key) = self.request_key(key_epoch) else {
                    let mut record = record;
                    record.rejected = Some("no request key".into());
                    self.push_request(record, None, None, None);
                    return;
                };
                self.taint.register(format!("user/input/{index}"), &codec::encode(&call));
                let (payload, k_res) = seal_invoke(&key, target, &call, &mut rng);
                self.taint.register(format!("user/k_res/{index}"), k_res.bytes());
                let u = self.users.get_mut(&user).expect("validated user");
                u.nonce += 1;
                let tx = SignedTransaction::new(&u.key, &TxBody::InvokePC(payload), u.nonce);
                self.push_request(record, Some(&tx), Some(target), Some(k_res));
                self.schedule(self.now, Event::ToLedger(Box::new(tx)));
            }
            ScriptEntry::RegisterNode { .. } => self.register_node(),
            ScriptEntry::WithdrawNode { node, .. } => {
                let h = &mut self.hosts[node];
                if h.active {
                    h.nonce += 1;
                    let tx = SignedTransaction::new(&h.operator, &TxBody::Withdraw, h.nonce);
                    self.submit_from_host(node, tx, 0);
                }
            }
        }
    }

    fn name_address(&self, n: &str) -> Address {
        match self.names.get(n) {
            Some(a) => *a,
            // ACL may name a contract deployed later in the script.
            None => {
                let (deployer, nth) = self.future_contract(n).expect("validated acl name");
                Address::contract(&self.users[&deployer].address, nth)
            }
        }
    }

    /// Deployer and nonce a not-yet-deployed contract will get.
    fn future_contract(&self, name: &str) -> Option<(String, u64)> {
        let mut nonces: BTreeMap<&str, u64> = self.users.iter().map(|(k, _)| (k.as_str(), 0)).collect();
        for e in &self.sc.script {
            match e.get_ref() {
                ScriptEntry::Deploy { user, name: n, .. } => {
                    let c = nonces.get_mut(user.as_str())?;
                    *c += 1;
                    if n == name {
                        return Some((user.clone(), *c));
                    }
                }
                ScriptEntry::Invoke { user, .. } => *nonces.get_mut(user.as_str())? += 1,
                _ => {}
            }
        }
        None
    }

    fn request_key(&self, epoch: Option<u64>) -> Option<crate::crypto::RequestPublicKey> {
        let mc = &self.ledger.state().mc;
        match epoch {
            Some(e) => mc.tx_key(e).map(|r| r.public),
            None => mc.current_tx_key().map(|r| r.public),
        }
    }

    fn new_record(
        &self,
        index: usize,
        user: &str,
        action: &str,
        contract: &str,
        function: Option<String>,
        key_epoch: Option<u64>,
    ) -> RequestRecord {
        RequestRecord {
            script_index: index,
            user: user.to_string(),
            action: action.to_string(),
            contract: contract.to_string(),
            function,
            key_epoch,
            included_block: None,
            ready_block: None,
            latency: None,
            request_cost: None,
            result_cost: None,
            outcome: None,
            result: None,
            steps: None,
            rejected: None,
        }
    }

    fn push_request(
        &mut self,
        record: RequestRecord,
        tx: Option<&SignedTransaction>,
        contract: Option<Address>,
        k_res: Option<SymmetricKey>,
    ) {
        let digest = tx.map(SignedTransaction::digest);
        if let Some(d) = digest {
            self.request_by_tx.insert(d, self.requests.len());
        }
        self.requests.push(Tracked { record, id: None, contract, k_res });
    }

    fn register_node(&mut self) {
        let Some(k) = self.hosts.iter().position(|h| !h.active) else { return };
        let Some(endorser) = (0..self.hosts.len()).find(|&j| {
            self.hosts[j].up
                && self.enclaves[j].as_ref().is_some_and(|e| e.mirror().mc.node_index(&self.hosts[j].address).is_some())
        }) else {
            self.log.push(format!("tick {}: no live endorser for node {k}", self.now));
            return;
        };
        let mut e = Enclave::launch(self.config.clone(), self.hosts[k].enclave_seed, self.hosts[k].address);
        let endorser_enclave = self.enclaves[endorser].as_mut().expect("checked");
        let (signature, provision) = attest(endorser_enclave, &e, self.hosts[k].address, &mut self.taint);
        for (id, bytes) in endorser_enclave.drain_secrets() {
            self.taint.register(id, &bytes);
        }
        let msg = HostMessage { now: self.now, input: HostInput::Provision(provision) }.encode();
        self.taint.observe(format!("wire/provision/{k}"), &msg);
        e.handle(&msg, &mut crate::enclave::NoBlobs);
        for (id, bytes) in e.drain_secrets() {
            self.taint.register(id, &bytes);
        }
        let payload = e.registration(self.hosts[endorser].address, signature, self.config.chain.min_deposit);
        self.enclaves[k] = Some(e);
        let h = &mut self.hosts[k];
        h.active = true;
        h.up = true;
        h.nonce += 1;
        let tx = SignedTransaction::new(&h.operator, &TxBody::Register(payload), h.nonce);
        self.submit_from_host(k, tx, 0);
        self.ship_chain(k);
    }

    /// Host-to-ledger submission, FIFO per host so nonces arrive in order.
    fn submit_from_host(&mut self, i: usize, tx: SignedTransaction, extra: u64) {
        let at = (self.now + self.net_delay() + extra).max(self.hosts[i].ledger_fifo);
        self.hosts[i].ledger_fifo = at;
        self.schedule(at, Event::ToLedger(Box::new(tx)));
    }

    fn send(&mut self, from: usize, to: usize, input: HostInput) {
        let honest = self.hosts[from].honest() && self.hosts[to].honest();
        let at = self.now + self.net_delay();
        let sent = self.now;
        self.schedule(at, Event::ToNode { node: to, input, sent, honest });
    }

    /// One message across node `i`'s enclave boundary, then the host acts
    /// on the outputs.
    fn handle(&mut self, i: usize, input: HostInput) {
        // Block contents are observed once, when produced.
        let wire = !matches!(input, HostInput::Blocks(_) | HostInput::Tick);
        let msg = HostMessage { now: self.now, input }.encode();
        if wire {
            self.taint.observe(format!("wire/in/{i}/{}", self.now), &msg);
        }
        let Some(enclave) = self.enclaves[i].as_mut() else { return };
        let mut fetcher = Fetcher { hosts: &self.hosts, me: i, failures: 0 };
        let raw = enclave.handle(&msg, &mut fetcher);
        let failures = fetcher.failures;
        for (id, bytes) in enclave.drain_secrets() {
            self.taint.register(id, &bytes);
        }
        if failures > 0 {
            self.hosts[i].fetch_failures += failures;
            self.log.push(format!("tick {}: node {i} could not fetch {failures} blob(s)", self.now));
        }
        let mut outs = Vec::with_capacity(raw.len());
        for (k, bytes) in raw.iter().enumerate() {
            self.taint.observe(format!("out/{i}/{}/{k}", self.now), bytes);
            outs.push(EnclaveOutput::decode(bytes).expect("enclave output decodes"));
        }
        if self.hosts[i].has(|b| matches!(b, Behavior::Reorder)) {
            for pair in outs.chunks_mut(2) {
                pair.reverse();
            }
        }
        let mut round = 0;
        for out in outs {
            self.on_output(i, &mut round, out);
        }
    }

    fn on_output(&mut self, i: usize, round: &mut u64, out: EnclaveOutput) {
        match out {
            EnclaveOutput::Publish { round: r, payload } => {
                let h = &self.hosts[i];
                if h.has(|b| matches!(b, Behavior::DropOutput)) {
                    return;
                }
                let extra = h
                    .behaviors
                    .iter()
                    .map(|b| if let Behavior::Delay { ticks } = b { *ticks } else { 0 })
                    .sum::<u64>();
                let (start, end) = (payload.body.start.number, payload.body.end.number);
                let h = &mut self.hosts[i];
                h.nonce += 1;
                h.publishes += 1;
                let tx = SignedTransaction::new(&h.operator, &TxBody::Publish(payload), h.nonce);
                self.publish_by_tx.insert(tx.digest(), self.publishes.len());
                let head = self.ledger.chain_head().number;
                self.publishes.push(PublishRecord {
                    node: i,
                    round: r,
                    start,
                    end,
                    submitted_tick: self.now,
                    included_block: None,
                    accepted: false,
                    reason: None,
                    freshness: false,
                    rotation_epoch: None,
                    cost: None,
                    view_lag: head.saturating_sub(r),
                });
                self.submit_from_host(i, tx, extra);
            }
            EnclaveOutput::SendBlob { to, blob } => {
                let Some(&j) = self.by_address.get(&to) else { return };
                if self.hosts[i].withholds() && !self.hosts[j].withholds() {
                    return;
                }
                self.note_sent(i, *round, &blob.digest, j);
                let from = self.hosts[i].address;
                self.taint.observe(format!("blob/{}", blob.digest), &blob.ciphertext);
                self.send(i, j, HostInput::StoreBlob { from, blob });
            }
            EnclaveOutput::StoreLocal(blob) => {
                self.note_sent(i, *round, &blob.digest, i);
                self.taint.observe(format!("blob/{}", blob.digest), &blob.ciphertext);
                self.hosts[i].store.put(blob);
            }
            EnclaveOutput::Ack { to, digest, confirmation } => {
                let Some(&j) = self.by_address.get(&to) else { return };
                self.hosts[i].acked.insert(digest);
                if let Some(&d) = self.dissemination_index.get(&(j, digest)) {
                    let acks = &mut self.disseminations[d].acks;
                    if !acks.contains(&i) {
                        acks.push(i);
                        acks.sort_unstable();
                    }
                }
                self.send(i, j, HostInput::Ack { digest, confirmation });
            }
            EnclaveOutput::Attestation { .. } => {}
            EnclaveOutput::Event(e) => match e {
                EnclaveEvent::Selected { round: r, .. } => {
                    *round = r;
                    self.hosts[i].selected.push(r);
                }
                EnclaveEvent::RoundAbandoned { round: r, .. } => self.hosts[i].abandoned.push(r),
                EnclaveEvent::BlockRejected { .. } => self.hosts[i].rejected_blocks += 1,
                _ => {}
            },
        }
    }

    fn note_sent(&mut self, executor: usize, round: u64, digest: &Digest, to: usize) {
        let key = (executor, *digest);
        let idx = match self.dissemination_index.get(&key) {
            Some(&d) if self.disseminations[d].round == round => d,
            _ => {
                let state = self.ledger.state();
                let n = state.mc.node_list.len();
                let subnet = state
                    .canonical_hash(round)
                    .and_then(|h| {
                        crate::storage::select_subnet(&crate::storage::subnet_seed(&h, digest), n, self.sc.rsts.subnet).ok()
                    })
                    .unwrap_or_default();
                self.disseminations.push(DisseminationRecord {
                    round,
                    executor,
                    digest: *digest,
                    subnet,
                    sent_to: Vec::new(),
                    acks: if to == executor { vec![executor] } else { Vec::new() },
                    honest_holders: Vec::new(),
                });
                self.dissemination_index.insert(key, self.disseminations.len() - 1);
                self.disseminations.len() - 1
            }
        };
        let d = &mut self.disseminations[idx];
        if !d.sent_to.contains(&to) {
            d.sent_to.push(to);
            d.sent_to.sort_unstable();
        }
        if to == executor && !d.acks.contains(&executor) {
            d.acks.push(executor);
            d.acks.sort_unstable();
        }
    }

    fn build_report(&mut self) -> RunReport {
        let state = self.ledger.state();
        let mc = &state.mc;
        let final_leb = mc.leb.number;
        let blocks = self.ledger.chain_head().number;
        let mut invariant_violations = Vec::new();

        // LEB tiling over accepted publishes in inclusion order.
        let mut accepted: Vec<&PublishRecord> = self.publishes.iter().filter(|p| p.accepted).collect();
        accepted.sort_by_key(|p| (p.included_block, p.submitted_tick));
        let mut cursor = 0;
        for p in &accepted {
            if p.start != cursor || p.end <= p.start {
                invariant_violations.push(format!("leb tiling: accepted ({}, {}] after LEB {cursor}", p.start, p.end));
            }
            cursor = p.end;
        }
        if cursor != final_leb {
            invariant_violations.push(format!("leb tiling: final LEB {final_leb} but last accepted end {cursor}"));
        }
        if mc.remunerations.len() != accepted.len() {
            invariant_violations.push(format!(
                "remuneration: {} payments for {} accepted publishes",
                mc.remunerations.len(),
                accepted.len()
            ));
        }
        for (r, p) in mc.remunerations.iter().zip(&accepted) {
            if (r.start, r.end) != (p.start, p.end) || r.node != self.hosts[p.node].address {
                invariant_violations.push(format!("remuneration: payment for ({}, {}] does not match", r.start, r.end));
            }
        }
        invariant_violations.extend(self.delivery_violations.iter().map(|v| format!("delivery: {v}")));
        for (i, h) in self.hosts.iter().enumerate() {
            for d in &h.acked {
                if !h.store.contains(d) {
                    invariant_violations.push(format!("durability: node {i} acknowledged {d} without storing it"));
                }
            }
        }
        let taint_violations = self.taint.check();
        for v in &taint_violations {
            invariant_violations.push(format!("taint: {} observed in {}", v.secret, v.observation));
        }

        let ends: BTreeSet<u64> = accepted.iter().map(|p| p.end).collect();
        for r in self.rounds.iter_mut() {
            r.responded = ends.contains(&r.block);
        }
        let availability_gaps: Vec<u64> = (1..=final_leb).filter(|b| !ends.contains(b)).collect();
        let redundant_publishes =
            self.publishes.iter().filter(|p| p.reason.as_deref() == Some("start_mismatch")).count();

        for d in self.disseminations.iter_mut() {
            d.honest_holders = d
                .subnet
                .iter()
                .filter_map(|&ix| mc.node_list.get(ix as usize).and_then(|e| self.by_address.get(&e.address)))
                .copied()
                .filter(|&h| !self.hosts[h].withholds() && self.hosts[h].store.contains(&d.digest))
                .collect();
        }

        let nodes = self
            .hosts
            .iter()
            .enumerate()
            .filter(|(_, h)| h.active)
            .map(|(i, h)| NodeSummary {
                index: i,
                address: h.address.to_string(),
                behaviors: h.behaviors.iter().map(|b| format!("{b:?}")).collect(),
                publishes: h.publishes,
                selected_rounds: h.selected.clone(),
                abandoned_rounds: h.abandoned.clone(),
                rejected_blocks: h.rejected_blocks,
                fetch_failures: h.fetch_failures,
            })
            .collect();

        let snapshot = serde_json::to_vec(&state.snapshot(blocks)).expect("snapshot serializes");
        let (plaintext_state_digest, plaintext_state_leb) = match self.plaintext_view() {
            Some((leb, d)) => (Some(d), Some(leb)),
            None => (None, None),
        };
        let state = self.ledger.state();
        let mc = &state.mc;
        RunReport {
            schema_version: report::REPORT_SCHEMA_VERSION,
            scenario: self.sc.name.clone(),
            seed: self.seed,
            blocks,
            final_leb,
            requests: self.requests.iter().map(|t| t.record.clone()).collect(),
            publishes: self.publishes.clone(),
            remunerations: mc
                .remunerations
                .iter()
                .map(|r| RemunerationRecord {
                    node: r.node.to_string(),
                    amount: r.amount.to_string(),
                    block: r.paid_in_block,
                })
                .collect(),
            rounds: self.rounds.clone(),
            availability_gaps,
            redundant_publishes,
            disseminations: self.disseminations.clone(),
            checkpoints: self.checkpoints.clone(),
            key_epochs: mc
                .tx_keys
                .iter()
                .map(|k| KeyEpochRecord { epoch: k.public.epoch, installed_at: k.installed_at, expires_at: k.expires_at })
                .collect(),
            nodes,
            max_honest_delay: self.max_honest_delay,
            taint_secrets: self.taint.secret_count(),
            taint_observations: self.taint.observation_count(),
            taint_violations,
            invariant_violations,
            final_state_digest: hash(&snapshot),
            plaintext_state_digest,
            plaintext_state_leb,
        }
    }

    /// Plaintext digest of every contract as seen by the live enclave with
    /// the most advanced LEB.
    fn plaintext_view(&mut self) -> Option<(u64, Digest)> {
        let best = (0..self.hosts.len())
            .filter(|&i| self.hosts[i].up && self.enclaves[i].is_some())
            .max_by_key(|&i| (self.enclaves[i].as_ref().map(|e| e.mirror().mc.leb.number), std::cmp::Reverse(i)))?;
        let e = self.enclaves[best].as_mut()?;
        let leb = e.mirror().mc.leb.number;
        let mut fetcher = Fetcher { hosts: &self.hosts, me: best, failures: 0 };
        let d = e.plaintext_state_digest(&mut fetcher).ok()?;
        e.drain_secrets();
        Some((leb, d))
    }

    /// Decrypted contract view through node `i`'s enclave. Instrument only.
    pub fn inspect(&mut self, i: usize) -> Result<BTreeMap<Address, (InfoP, ContractProgram, KvState)>, RangeError> {
        let e = self.enclaves[i].as_mut().ok_or(RangeError::Corrupt(Digest::default(), "node is down".into()))?;
        let mut fetcher = Fetcher { hosts: &self.hosts, me: i, failures: 0 };
        let r = e.inspect_contracts(&mut fetcher);
        e.drain_secrets();
        r
    }

    /// Chain dump, one JSON object per block.
    pub fn chain_jsonl(&self) -> String {
        let mut out = String::new();
        for b in self.ledger.blocks() {
            let outcomes = self.ledger.outcomes(b.number()).unwrap_or(&[]);
            let line = ChainLine {
                number: b.number(),
                hash: b.hash,
                parent: b.header.parent_hash,
                tick: b.header.tick,
                transactions: b
                    .transactions
                    .iter()
                    .zip(outcomes)
                    .map(|(tx, o)| ChainTx {
                        index: o.index,
                        sender: tx.sender.to_string(),
                        kind: tx.kind.name(),
                        nonce: tx.nonce,
                        digest: tx.digest(),
                        cost: o.cost,
                        outcome: match &o.result {
                            Ok(_) => "ok".to_string(),
                            Err(e) => e.to_string(),
                        },
                    })
                    .collect(),
            };
            out.push_str(&serde_json::to_string(&line).expect("chain line serializes"));
            out.push('\n');
        }
        out
    }

    /// Writes report.json, chain.jsonl, metrics.csv and blobs/ into `dir`.
    pub fn write_outputs(&mut self, dir: &Path) -> std::io::Result<()> {
        let report = self.run().clone();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), report.to_json())?;
        std::fs::write(dir.join("chain.jsonl"), self.chain_jsonl())?;
        std::fs::write(dir.join("metrics.csv"), report.metrics_csv())?;
        let mut blobs: BTreeMap<Digest, (StorageBlob, Vec<u32>)> = BTreeMap::new();
        for (i, h) in self.hosts.iter().enumerate() {
            for b in h.store.iter() {
                blobs.entry(b.digest).or_insert_with(|| (b.clone(), Vec::new())).1.push(i as u32);
            }
        }
        crate::storage::dump_blobs(&dir.join("blobs"), &blobs)
    }
}

/// Endorsement of `joining` by `endorser`: attestation signature plus the
/// sealed management keys.
fn attest(
    endorser: &mut Enclave,
    joining: &Enclave,
    operator: Address,
    taint: &mut TaintLedger,
) -> (crate::crypto::Signature, crate::crypto::SealedBox) {
    let msg = HostMessage { now: 0, input: HostInput::Attest { node_key: joining.public_key(), operator } }.encode();
    taint.observe("wire/attest", &msg);
    for bytes in endorser.handle(&msg, &mut crate::enclave::NoBlobs) {
        taint.observe("wire/attestation", &bytes);
        if let Ok(EnclaveOutput::Attestation { signature, provision, .. }) = EnclaveOutput::decode(&bytes) {
            return (signature, provision);
        }
    }
    panic!("endorser produced no attestation")
}

/// Same header, one transaction altered: fails the Merkle check.
fn forged(b: &Block) -> Option<Block> {
    let mut f = b.clone();
    let tx = f.transactions.first_mut()?;
    let last = tx.payload.last_mut()?;
    *last ^= 0x01;
    Some(f)
}

fn marker_label(m: &crate::onchain::RejectionMarker) -> &'static str {
    use crate::onchain::RejectionMarker::*;
    match m {
        StaleKey => "stale_key",
        Undecryptable => "undecryptable",
        InvalidDeployment => "invalid_deployment",
    }
}

fn render(v: &Value) -> String {
    match v {
        Value::Unit => "()".into(),
        Value::Bool(b) => b.to_string(),
        Value::U128(x) => x.to_string(),
        Value::I128(x) => x.to_string(),
        Value::Addr(a) => a.to_string(),
        Value::Bytes(b) => format!("0x{}", hex::encode(b)),
        Value::List(xs) => format!("[{}]", xs.iter().map(render).collect::<Vec<_>>().join(", ")),
    }
}

/// Parses, runs and reports. `seed` overrides the scenario's.
pub fn run_scenario(sc: Scenario, seed: Option<u64>) -> RunReport {
    Simulation::new(sc, seed).run().clone()
}
