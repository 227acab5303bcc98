//! Deterministic contract VM: registered programs over byte key-value state,
//! metered in steps, with ACL-gated nested calls that commit atomically.
//!
//! Step schedule: 1 per state read or write, 10 per nested call, 1 per loop
//! iteration a program reports through [`Ctx::tick`]. When the budget runs
//! out the call fails with [`VmError::OutOfSteps`] and exactly `limit` steps
//! are reported as used.

mod auction;
mod compute;
mod dex;
mod leaky;
mod token;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::Address;

pub use auction::Auction;
pub use compute::Compute;
pub use dex::{swap_output, Dex};
pub use leaky::Leaky;
pub use token::Token;

pub const DEFAULT_STEP_LIMIT: u64 = 1_000_000;
pub const DEFAULT_MAX_CALL_DEPTH: u32 = 32;
pub const STEP_STATE_ACCESS: u64 = 1;
pub const STEP_CALL: u64 = 10;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Value {
    Unit,
    Bool(bool),
    U128(u128),
    I128(i128),
    Addr(Address),
    Bytes(Vec<u8>),
    List(Vec<Value>),
}

/// Contract ABI: a function name and its arguments.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Call {
    pub function: String,
    pub args: Vec<Value>,
}

impl Call {
    pub fn new(function: &str, args: Vec<Value>) -> Self {
        Self { function: function.to_string(), args }
    }
}

/// The code blob: which registered program plus its constructor arguments.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractProgram {
    pub code_id: String,
    pub init_params: Vec<Value>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Acl {
    Any,
    Only(BTreeSet<Address>),
}

impl Acl {
    pub fn allows(&self, who: &Address) -> bool {
        match self {
            Acl::Any => true,
            Acl::Only(s) => s.contains(who),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum VmError {
    #[error("time exceeded")]
    OutOfSteps,
    #[error("unknown function {0}")]
    UnknownFunction(String),
    #[error("unknown program {0}")]
    UnknownProgram(String),
    #[error("bad arguments: {0}")]
    BadArguments(String),
    #[error("access denied: {caller} may not call {callee}")]
    AccessDenied { caller: Address, callee: Address },
    #[error("call depth exceeded")]
    DepthExceeded,
    #[error("unknown contract {0}")]
    UnknownContract(Address),
    #[error("contract data unavailable: {0}")]
    Unavailable(String),
    #[error("reverted: {0}")]
    Reverted(String),
}

impl VmError {
    pub fn label(&self) -> &'static str {
        match self {
            VmError::OutOfSteps => "time_exceeded",
            VmError::UnknownFunction(_) => "unknown_function",
            VmError::UnknownProgram(_) => "unknown_program",
            VmError::BadArguments(_) => "bad_arguments",
            VmError::AccessDenied { .. } => "access_denied",
            VmError::DepthExceeded => "depth_exceeded",
            VmError::UnknownContract(_) => "unknown_contract",
            VmError::Unavailable(_) => "unavailable",
            VmError::Reverted(_) => "reverted",
        }
    }
}

pub type KvState = BTreeMap<Vec<u8>, Vec<u8>>;

/// Everything the VM needs about one committed contract.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoadedContract {
    pub program: ContractProgram,
    pub acl: Acl,
    pub state: KvState,
}

/// Supplies committed contracts; the enclave implements it over decrypted blobs.
pub trait ContractLoader {
    fn load(&mut self, address: &Address) -> Result<Option<LoadedContract>, VmError>;
}

impl ContractLoader for BTreeMap<Address, LoadedContract> {
    fn load(&mut self, address: &Address) -> Result<Option<LoadedContract>, VmError> {
        Ok(self.get(address).cloned())
    }
}

pub trait Program: Sync {
    fn init(&self, ctx: &mut Ctx<'_, '_>, params: &[Value]) -> Result<(), VmError>;
    fn call(&self, ctx: &mut Ctx<'_, '_>, function: &str, args: &[Value]) -> Result<Value, VmError>;
}

pub fn program(code_id: &str) -> Option<&'static dyn Program> {
    Some(match code_id {
        "token" => &Token,
        "dex" => &Dex,
        "auction" => &Auction,
        "compute" => &Compute,
        "leaky" => &Leaky,
        _ => return None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VmConfig {
    pub step_limit: u64,
    pub max_call_depth: u32,
}

impl Default for VmConfig {
    fn default() -> Self {
        Self { step_limit: DEFAULT_STEP_LIMIT, max_call_depth: DEFAULT_MAX_CALL_DEPTH }
    }
}

/// Uncommitted effects of one transaction.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct TxFrame {
    states: BTreeMap<Address, KvState>,
    /// Successful call frames per contract.
    calls: BTreeMap<Address, u64>,
    events: Vec<(Address, Vec<u8>)>,
}

struct Core<'l> {
    loader: &'l mut dyn ContractLoader,
    meta: BTreeMap<Address, (ContractProgram, Acl)>,
    committed: BTreeMap<Address, KvState>,
    used: u64,
    config: VmConfig,
}

impl Core<'_> {
    fn charge(&mut self, n: u64) -> Result<(), VmError> {
        if self.used + n > self.config.step_limit {
            self.used = self.config.step_limit;
            return Err(VmError::OutOfSteps);
        }
        self.used += n;
        Ok(())
    }

    fn meta(&mut self, a: &Address) -> Result<(ContractProgram, Acl), VmError> {
        if let Some(m) = self.meta.get(a) {
            return Ok(m.clone());
        }
        let c = self.loader.load(a)?.ok_or(VmError::UnknownContract(*a))?;
        self.meta.insert(*a, (c.program.clone(), c.acl.clone()));
        self.committed.insert(*a, c.state);
        Ok((c.program, c.acl))
    }
}

/// Execution context handed to a program for one call frame.
pub struct Ctx<'c, 'l> {
    core: &'c mut Core<'l>,
    frame: TxFrame,
    caller: Address,
    this: Address,
    depth: u32,
}

impl Ctx<'_, '_> {
    pub fn caller(&self) -> Address {
        self.caller
    }

    pub fn this(&self) -> Address {
        self.this
    }

    fn state(&mut self) -> &mut KvState {
        let this = self.this;
        let committed = &self.core.committed;
        self.frame.states.entry(this).or_insert_with(|| committed.get(&this).cloned().unwrap_or_default())
    }

    pub fn get(&mut self, key: &[u8]) -> Result<Option<Vec<u8>>, VmError> {
        self.core.charge(STEP_STATE_ACCESS)?;
        Ok(self.state().get(key).cloned())
    }

    pub fn put(&mut self, key: &[u8], value: Vec<u8>) -> Result<(), VmError> {
        self.core.charge(STEP_STATE_ACCESS)?;
        self.state().insert(key.to_vec(), value);
        Ok(())
    }

    pub fn get_u128(&mut self, key: &[u8]) -> Result<u128, VmError> {
        Ok(self.get(key)?.map(|v| u128::from_be_bytes(v.try_into().unwrap_or([0; 16]))).unwrap_or(0))
    }

    pub fn put_u128(&mut self, key: &[u8], v: u128) -> Result<(), VmError> {
        self.put(key, v.to_be_bytes().to_vec())
    }

    pub fn get_addr(&mut self, key: &[u8]) -> Result<Option<Address>, VmError> {
        Ok(self.get(key)?.and_then(|v| v.try_into().ok()).map(Address))
    }

    /// Charges `n` loop iterations.
    pub fn tick(&mut self, n: u64) -> Result<(), VmError> {
        self.core.charge(n)
    }

    /// Publishes plain bytes on-chain alongside the results. Never encrypted.
    pub fn emit(&mut self, data: Vec<u8>) {
        self.frame.events.push((self.this, data));
    }

    /// Calls another contract as `this`. A failure is returned to the caller
    /// and none of the callee's effects survive.
    pub fn call(&mut self, target: Address, function: &str, args: Vec<Value>) -> Result<Value, VmError> {
        self.core.charge(STEP_CALL)?;
        if self.depth + 1 > self.core.config.max_call_depth {
            return Err(VmError::DepthExceeded);
        }
        let frame = self.frame.clone();
        let call = Call::new(function, args);
        let (result, frame) = run_frame(self.core, frame, self.this, target, &call, self.depth + 1);
        if result.is_ok() {
            self.frame = frame;
        }
        result
    }
}

fn run_frame(
    core: &mut Core<'_>,
    frame: TxFrame,
    caller: Address,
    target: Address,
    call: &Call,
    depth: u32,
) -> (Result<Value, VmError>, TxFrame) {
    let (prog, acl) = match core.meta(&target) {
        Ok(m) => m,
        Err(e) => return (Err(e), frame),
    };
    if !acl.allows(&caller) {
        return (Err(VmError::AccessDenied { caller, callee: target }), frame);
    }
    let Some(p) = program(&prog.code_id) else {
        return (Err(VmError::UnknownProgram(prog.code_id)), frame);
    };
    let mut ctx = Ctx { core, frame, caller, this: target, depth };
    let r = p.call(&mut ctx, &call.function, &call.args);
    let mut frame = ctx.frame;
    if r.is_ok() {
        *frame.calls.entry(target).or_default() += 1;
    }
    (r, frame)
}

/// Result of a successful top-level invocation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outcome {
    pub value: Value,
    /// Full post-state of every contract the transaction touched.
    pub states: BTreeMap<Address, KvState>,
    pub calls: BTreeMap<Address, u64>,
    pub events: Vec<(Address, Vec<u8>)>,
}

/// Runs `call` on `target` as `caller`. Returns the outcome (or error) and
/// the steps used either way.
pub fn invoke(
    loader: &mut dyn ContractLoader,
    config: VmConfig,
    caller: Address,
    target: Address,
    call: &Call,
) -> (Result<Outcome, VmError>, u64) {
    let mut core = Core { loader, meta: BTreeMap::new(), committed: BTreeMap::new(), used: 0, config };
    let (r, frame) = run_frame(&mut core, TxFrame::default(), caller, target, call, 0);
    let used = core.used;
    let r = r.map(|value| Outcome { value, states: frame.states, calls: frame.calls, events: frame.events });
    (r, used)
}

/// Runs a program's constructor for a new contract at `address`.
pub fn deploy(
    program_def: &ContractProgram,
    config: VmConfig,
    owner: Address,
    address: Address,
) -> (Result<KvState, VmError>, u64) {
    let Some(p) = program(&program_def.code_id) else {
        return (Err(VmError::UnknownProgram(program_def.code_id.clone())), 0);
    };
    let mut empty: BTreeMap<Address, LoadedContract> = BTreeMap::new();
    let mut core = Core { loader: &mut empty, meta: BTreeMap::new(), committed: BTreeMap::new(), used: 0, config };
    let mut ctx = Ctx { core: &mut core, frame: TxFrame::default(), caller: owner, this: address, depth: 0 };
    let r = p.init(&mut ctx, &program_def.init_params);
    let state = ctx.frame.states.remove(&address).unwrap_or_default();
    drop(ctx);
    let used = core.used;
    (r.map(|_| state), used)
}

pub(crate) fn arg<'a>(args: &'a [Value], i: usize) -> Result<&'a Value, VmError> {
    args.get(i).ok_or_else(|| VmError::BadArguments(format!("missing argument {i}")))
}

pub(crate) fn arg_u128(args: &[Value], i: usize) -> Result<u128, VmError> {
    match arg(args, i)? {
        Value::U128(v) => Ok(*v),
        Value::I128(v) if *v >= 0 => Ok(*v as u128),
        v => Err(VmError::BadArguments(format!("argument {i}: expected integer, got {v:?}"))),
    }
}

pub(crate) fn arg_addr(args: &[Value], i: usize) -> Result<Address, VmError> {
    match arg(args, i)? {
        Value::Addr(a) => Ok(*a),
        v => Err(VmError::BadArguments(format!("argument {i}: expected address, got {v:?}"))),
    }
}

pub(crate) fn arg_bytes(args: &[Value], i: usize) -> Result<Vec<u8>, VmError> {
    match arg(args, i)? {
        Value::Bytes(b) => Ok(b.clone()),
        v => Err(VmError::BadArguments(format!("argument {i}: expected bytes, got {v:?}"))),
    }
}

pub(crate) fn key(prefix: &[u8], parts: &[&Address]) -> Vec<u8> {
    let mut k = prefix.to_vec();
    for p in parts {
        k.extend_from_slice(&p.0);
    }
    k
}

pub(crate) fn revert<T>(msg: &str) -> Result<T, VmError> {
    Err(VmError::Reverted(msg.to_string()))
}
