//! Scenario files: TOML, validated in full before anything runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::vm;

pub const DEFAULT_BLOCK_INTERVAL: u64 = 12;

/// Schema error with a 1-based line and column when one is known.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScenarioError {
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "line {l}, column {c}: {}", self.message),
            (Some(l), None) => write!(f, "line {l}: {}", self.message),
            _ => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ScenarioError {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub seed: u64,
    pub nodes: usize,
    pub committee: u64,
    /// Management key rotation period in blocks; 0 disables rotation.
    #[serde(default)]
    pub mkrp: u64,
    #[serde(default)]
    pub transition_window: u64,
    #[serde(default = "default_interval")]
    pub block_interval: u64,
    pub end_tick: u64,
    #[serde(default)]
    pub users: Vec<String>,
    #[serde(default)]
    pub rsts: RstsSection,
    #[serde(default)]
    pub exec: ExecSection,
    #[serde(default)]
    pub fees: FeeSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub taint: TaintSection,
    #[serde(default)]
    pub host: Vec<Spanned<HostSpec>>,
    #[serde(default)]
    pub script: Vec<Spanned<ScriptEntry>>,
}

fn default_interval() -> u64 {
    DEFAULT_BLOCK_INTERVAL
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RstsSection {
    pub subnet: usize,
    pub threshold: usize,
    /// Ticks an executor waits for acknowledgements.
    pub timeout: u64,
}

impl Default for RstsSection {
    fn default() -> Self {
        Self { subnet: 3, threshold: 2, timeout: 2 * DEFAULT_BLOCK_INTERVAL }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecSection {
    pub step_limit: u64,
    pub max_call_depth: u32,
    pub publish_empty: bool,
}

impl Default for ExecSection {
    fn default() -> Self {
        let d = vm::VmConfig::default();
        Self { step_limit: d.step_limit, max_call_depth: d.max_call_depth, publish_empty: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeeSection {
    pub request: u64,
    pub base_reward: u64,
    pub min_deposit: u64,
    pub initial_balance: u64,
}

impl Default for FeeSection {
    fn default() -> Self {
        Self { request: 10, base_reward: 100, min_deposit: 1_000, initial_balance: 1_000_000_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub min_delay: u64,
    /// Bound on every honest-to-honest delivery.
    pub max_delay: u64,
    /// Extra jitter in ticks, still clamped to `max_delay`.
    pub reorder_window: u64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self { min_delay: 1, max_delay: 3, reorder_window: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaintSection {
    pub min_match: usize,
}

impl Default for TaintSection {
    fn default() -> Self {
        Self { min_match: 16 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostSpec {
    pub node: usize,
    pub behaviors: Vec<Behavior>,
}

/// Host misbehaviour at the enclave boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Behavior {
    /// Discard every Publish the enclave produces.
    DropOutput,
    /// Hold Publish transactions back by this many ticks.
    Delay { ticks: u64 },
    /// Swap adjacent outputs before acting on them.
    Reorder,
    /// Feed the enclave a chain view `depth` blocks behind the head.
    StaleBlock { depth: u64 },
    CrashAt { tick: u64 },
    RestartAt { tick: u64 },
    /// Crash when selected for this round; come back one block later.
    CrashIfSelected { round: u64 },
    /// Acknowledge blobs but serve them only to other withholding hosts.
    WithholdStorage,
    /// Deliver a tampered copy of each non-empty block before the real one.
    ForgeBlocks,
    /// Skip each block delivery with this probability.
    Dropout { probability: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScriptEntry {
    Deploy {
        block: u64,
        user: String,
        name: String,
        program: String,
        #[serde(default)]
        params: Vec<Arg>,
        #[serde(default)]
        acl: AclSpec,
        #[serde(default = "default_ckrp")]
        ckrp: u64,
        #[serde(default)]
        key_epoch: Option<u64>,
    },
    Invoke {
        block: u64,
        user: String,
        contract: String,
        function: String,
        #[serde(default)]
        args: Vec<Arg>,
        /// Seal under this request key epoch instead of the current one.
        #[serde(default)]
        key_epoch: Option<u64>,
    },
    RegisterNode {
        block: u64,
    },
    WithdrawNode {
        block: u64,
        node: usize,
    },
}

fn default_ckrp() -> u64 {
    1_000
}

impl ScriptEntry {
    pub fn block(&self) -> u64 {
        match self {
            ScriptEntry::Deploy { block, .. }
            | ScriptEntry::Invoke { block, .. }
            | ScriptEntry::RegisterNode { block }
            | ScriptEntry::WithdrawNode { block, .. } => *block,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ScriptEntry::Deploy { .. } => "deploy",
            ScriptEntry::Invoke { .. } => "invoke",
            ScriptEntry::RegisterNode { .. } => "register_node",
            ScriptEntry::WithdrawNode { .. } => "withdraw_node",
        }
    }
}

/// `"any"` or a list of user and contract names.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AclSpec {
    Keyword(String),
    Names(Vec<String>),
}

impl Default for AclSpec {
    fn default() -> Self {
        AclSpec::Keyword("any".into())
    }
}

/// Call argument. Integers map to `U128` (or `I128` when negative),
/// `"@name"` to an address, `"0x…"` to bytes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Arg {
    Int(i64),
    Bool(bool),
    Text(String),
    List(Vec<Arg>),
}

impl Arg {
    fn check(&self, known: &dyn Fn(&str) -> bool) -> Result<(), String> {
        match self {
            Arg::Text(s) => {
                if let Some(name) = s.strip_prefix('@') {
                    if !known(name) {
                        return Err(format!("argument refers to unknown name '{name}'"));
                    }
                } else if let Some(h) = s.strip_prefix("0x") {
                    hex::decode(h).map_err(|e| format!("bad hex argument '{s}': {e}"))?;
                } else {
                    return Err(format!("string argument '{s}' must start with '@' or '0x'"));
                }
                Ok(())
            }
            Arg::List(xs) => xs.iter().try_for_each(|x| x.check(known)),
            _ => Ok(()),
        }
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let sc: Scenario = toml::from_str(text).map_err(|e| {
            let (line, column) = match e.span() {
                Some(span) => {
                    let (l, c) = line_col(text, span.start);
                    (Some(l), Some(c))
                }
                None => (None, None),
            };
            ScenarioError { line, column, message: e.message().to_string() }
        })?;
        sc.validate(text)?;
        Ok(sc)
    }

    /// Number of blocks produced before `end_tick`.
    pub fn block_count(&self) -> u64 {
        self.end_tick / self.block_interval
    }

    /// Nodes present at any point: initial plus registered by script.
    pub fn total_nodes(&self) -> usize {
        self.nodes + self.script.iter().filter(|e| matches!(e.get_ref(), ScriptEntry::RegisterNode { .. })).count()
    }

    pub fn behaviors(&self, node: usize) -> Vec<Behavior> {
        self.host.iter().filter(|h| h.get_ref().node == node).flat_map(|h| h.get_ref().behaviors.clone()).collect()
    }

    /// Canonical TOML, used when sweeps rewrite parameters.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    fn validate(&self, text: &str) -> Result<(), ScenarioError> {
        let top = |message: String| ScenarioError { line: None, column: None, message };
        if self.nodes == 0 {
            return Err(top("nodes must be at least 1".into()));
        }
        if self.committee == 0 || self.committee as usize > self.nodes {
            return Err(top(format!("committee must be in 1..={}", self.nodes)));
        }
        if self.block_interval == 0 {
            return Err(top("block_interval must be positive".into()));
        }
        if self.block_count() == 0 {
            return Err(top("end_tick must cover at least one block".into()));
        }
        if self.rsts.subnet == 0 || self.rsts.subnet > self.nodes {
            return Err(top(format!("rsts.subnet must be in 1..={}", self.nodes)));
        }
        if self.rsts.threshold == 0 || self.rsts.threshold > self.rsts.subnet {
            return Err(top("rsts.threshold must be in 1..=rsts.subnet".into()));
        }
        if self.network.min_delay > self.network.max_delay {
            return Err(top("network.min_delay exceeds network.max_delay".into()));
        }
        if self.mkrp > 0 && self.transition_window == 0 {
            return Err(top("transition_window must be positive when mkrp is set".into()));
        }
        if self.taint.min_match == 0 {
            return Err(top("taint.min_match must be positive".into()));
        }
        if self.exec.step_limit == 0 || self.exec.max_call_depth == 0 {
            return Err(top("exec limits must be positive".into()));
        }
        let mut users = BTreeSet::new();
        for u in &self.users {
            if !users.insert(u.as_str()) {
                return Err(top(format!("duplicate user '{u}'")));
            }
        }
        let total = self.total_nodes();
        for h in &self.host {
            let (line, column) = line_col(text, h.span().start);
            let at = |message: String| ScenarioError { line: Some(line), column: Some(column), message };
            let spec = h.get_ref();
            if spec.node >= total {
                return Err(at(format!("unknown node {} (scenario has {total})", spec.node)));
            }
            for b in &spec.behaviors {
                match b {
                    Behavior::Dropout { probability } if !(0.0..=1.0).contains(probability) => {
                        return Err(at("dropout probability must be in [0, 1]".into()));
                    }
                    Behavior::CrashIfSelected { round } if *round == 0 => {
                        return Err(at("crash_if_selected round must be at least 1".into()));
                    }
                    _ => {}
                }
            }
        }
        let last = self.block_count();
        let mut contracts: BTreeMap<&str, u64> = BTreeMap::new();
        let mut prev_block = 0;
        for e in &self.script {
            let (line, column) = line_col(text, e.span().start);
            let at = |message: String| ScenarioError { line: Some(line), column: Some(column), message };
            let entry = e.get_ref();
            let b = entry.block();
            if b == 0 || b > last {
                return Err(at(format!("block {b} outside 1..={last}")));
            }
            if b < prev_block {
                return Err(at("script entries must be ordered by block".into()));
            }
            prev_block = b;
            match entry {
                ScriptEntry::Deploy { user, name, program, params, acl, ckrp, .. } => {
                    if !users.contains(user.as_str()) {
                        return Err(at(format!("unknown user '{user}'")));
                    }
                    if users.contains(name.as_str()) || contracts.contains_key(name.as_str()) {
                        return Err(at(format!("name '{name}' already in use")));
                    }
                    if vm::program(program).is_none() {
                        return Err(at(format!("unknown program '{program}'")));
                    }
                    if *ckrp == 0 {
                        return Err(at("ckrp must be positive".into()));
                    }
                    let known = |n: &str| users.contains(n) || contracts.contains_key(n);
                    params.iter().try_for_each(|a| a.check(&known)).map_err(at)?;
                    match acl {
                        AclSpec::Keyword(k) if k == "any" => {}
                        AclSpec::Keyword(k) => return Err(at(format!("acl must be \"any\" or a list, got '{k}'"))),
                        // ACL entries may name contracts deployed later.
                        AclSpec::Names(ns) => {
                            for n in ns {
                                let later = self.script.iter().any(|x| {
                                    matches!(x.get_ref(), ScriptEntry::Deploy { name, .. } if name == n)
                                });
                                if !users.contains(n.as_str()) && !later {
                                    return Err(at(format!("acl names unknown identity '{n}'")));
                                }
                            }
                        }
                    }
                    contracts.insert(name, b);
                }
                ScriptEntry::Invoke { user, contract, args, .. } => {
                    if !users.contains(user.as_str()) {
                        return Err(at(format!("unknown user '{user}'")));
                    }
                    match contracts.get(contract.as_str()) {
                        None => return Err(at(format!("contract '{contract}' is not deployed before this invoke"))),
                        Some(&db) if db >= b => {
                            return Err(at(format!("contract '{contract}' is deployed at block {db}, invoke must come later")))
                        }
                        _ => {}
                    }
                    let known = |n: &str| users.contains(n) || contracts.contains_key(n);
                    args.iter().try_for_each(|a| a.check(&known)).map_err(at)?;
                }
                ScriptEntry::RegisterNode { .. } => {}
                ScriptEntry::WithdrawNode { node, .. } => {
                    if *node >= total {
                        return Err(at(format!("unknown node {node}")));
                    }
                }
            }
        }
        Ok(())
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map(|i| i + 1).unwrap_or(0) + 1;
    (line, column)
}

/// Scenarios shipped with the crate.
pub const BUNDLED: &[(&str, &str)] = &[
    ("token", include_str!("../../scenarios/token.toml")),
    ("dex_swap", include_str!("../../scenarios/dex_swap.toml")),
    ("auction", include_str!("../../scenarios/auction.toml")),
    ("compute_cost", include_str!("../../scenarios/compute_cost.toml")),
    ("dropout_recovery", include_str!("../../scenarios/dropout_recovery.toml")),
    ("stale_block_attack", include_str!("../../scenarios/stale_block_attack.toml")),
    ("rsts_coalition", include_str!("../../scenarios/rsts_coalition.toml")),
    ("key_rotation", include_str!("../../scenarios/key_rotation.toml")),
];

pub fn bundled(name: &str) -> Option<Scenario> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| Scenario::parse(t).expect("bundled scenario is valid"))
}
