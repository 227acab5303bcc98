//! Run report: the JSON document a simulation produces.

use serde::Serialize;

use crate::crypto::Digest;

use super::taint::TaintViolation;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RequestRecord {
    /// Position in the scenario script.
    pub script_index: usize,
    pub user: String,
    pub action: String,
    pub contract: String,
    pub function: Option<String>,
    pub key_epoch: Option<u64>,
    pub included_block: Option<u64>,
    /// First block whose state shows the result.
    pub ready_block: Option<u64>,
    /// `ready_block - included_block`.
    pub latency: Option<u64>,
    /// Cost counter of the request transaction.
    pub request_cost: Option<u64>,
    /// Cost counter attributable to this request's result in its Publish.
    pub result_cost: Option<u64>,
    pub outcome: Option<String>,
    /// Result as decrypted by the requesting user.
    pub result: Option<String>,
    pub steps: Option<u64>,
    pub rejected: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PublishRecord {
    pub node: usize,
    pub round: u64,
    pub start: u64,
    pub end: u64,
    pub submitted_tick: u64,
    pub included_block: Option<u64>,
    pub accepted: bool,
    pub reason: Option<String>,
    pub freshness: bool,
    pub rotation_epoch: Option<u64>,
    pub cost: Option<u64>,
    /// Chain view the node had when it selected itself, relative to the head.
    pub view_lag: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RemunerationRecord {
    pub node: String,
    pub amount: String,
    pub block: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RoundRecord {
    pub block: u64,
    pub committee: Vec<u64>,
    /// Every committee member was down when the block was produced.
    pub all_down: bool,
    /// An accepted Publish ended at this block.
    pub responded: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DisseminationRecord {
    pub round: u64,
    pub executor: usize,
    pub digest: Digest,
    pub subnet: Vec<u32>,
    pub sent_to: Vec<usize>,
    pub acks: Vec<usize>,
    /// Subnet members that are not withholding and hold the blob at the end.
    pub honest_holders: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Checkpoint {
    pub block: u64,
    pub end: u64,
    /// Digest over the on-chain integrity hashes of every contract.
    pub hashes_digest: Digest,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct KeyEpochRecord {
    pub epoch: u64,
    pub installed_at: u64,
    pub expires_at: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NodeSummary {
    pub index: usize,
    pub address: String,
    pub behaviors: Vec<String>,
    pub publishes: usize,
    pub selected_rounds: Vec<u64>,
    pub abandoned_rounds: Vec<u64>,
    pub rejected_blocks: usize,
    pub fetch_failures: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub blocks: u64,
    pub final_leb: u64,
    pub requests: Vec<RequestRecord>,
    pub publishes: Vec<PublishRecord>,
    pub remunerations: Vec<RemunerationRecord>,
    pub rounds: Vec<RoundRecord>,
    /// Rounds up to the final LEB with no accepted Publish ending there.
    pub availability_gaps: Vec<u64>,
    /// Accepted-then-superseded work: Publishes rejected for a stale start.
    pub redundant_publishes: usize,
    pub disseminations: Vec<DisseminationRecord>,
    pub checkpoints: Vec<Checkpoint>,
    pub key_epochs: Vec<KeyEpochRecord>,
    pub nodes: Vec<NodeSummary>,
    pub max_honest_delay: u64,
    pub taint_secrets: usize,
    pub taint_observations: usize,
    pub taint_violations: Vec<TaintViolation>,
    pub invariant_violations: Vec<String>,
    /// Digest of the final on-chain snapshot.
    pub final_state_digest: Digest,
    /// Digest of every contract's plaintext program, state and invocation
    /// count, read through an enclave (simulation instrument).
    pub plaintext_state_digest: Option<Digest>,
    /// LEB of the enclave view the plaintext digest was taken at.
    pub plaintext_state_leb: Option<u64>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn is_clean(&self) -> bool {
        self.invariant_violations.is_empty()
    }

    /// Per-request metrics as CSV.
    pub fn metrics_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "script_index", "user", "action", "contract", "function", "included_block", "ready_block", "latency",
            "request_cost", "result_cost", "outcome", "steps",
        ])
        .expect("csv header");
        let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.requests {
            w.write_record([
                r.script_index.to_string(),
                r.user.clone(),
                r.action.clone(),
                r.contract.clone(),
                r.function.clone().unwrap_or_default(),
                opt(r.included_block),
                opt(r.ready_block),
                opt(r.latency),
                opt(r.request_cost),
                opt(r.result_cost),
                r.outcome.clone().unwrap_or_default(),
                opt(r.steps),
            ])
            .expect("csv row");
        }
        String::from_utf8(w.into_inner().expect("csv flush")).expect("utf8")
    }
}
