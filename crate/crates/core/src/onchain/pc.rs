use serde::Serialize;
use thiserror::Error;

use crate::crypto::{hash, SealedBox};
use crate::codec;
use crate::onchain::ResultPayload;
use crate::types::{Address, RequestId};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Deployment {
    pub enc_code: SealedBox,
    pub enc_config: SealedBox,
    pub sender: Address,
    pub request: RequestId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PcRequest {
    pub id: RequestId,
    pub enc_input: SealedBox,
    pub enc_result_key: SealedBox,
    pub sender: Address,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ResultStatus {
    Pending,
    Ready(ResultPayload),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PcError {
    #[error("unknown request {0}")]
    UnknownRequest(RequestId),
    #[error("result for {0} already recorded")]
    AlreadyRecorded(RequestId),
}

/// Program-contract proxy: records the encrypted deployment, every encrypted
/// request and the write-once encrypted results.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PcState {
    pub address: Address,
    pub owner: Address,
    pub deployment: Deployment,
    pub request_log: Vec<PcRequest>,
    results: std::collections::BTreeMap<RequestId, ResultPayload>,
}

impl PcState {
    pub fn deploy(address: Address, deployment: Deployment) -> Self {
        Self {
            address,
            owner: deployment.sender,
            deployment,
            request_log: Vec::new(),
            results: Default::default(),
        }
    }

    pub fn execute(&mut self, request: PcRequest) {
        debug_assert!(self.request_log.last().map_or(true, |r| r.id < request.id));
        self.request_log.push(request);
    }

    fn knows(&self, id: &RequestId) -> bool {
        self.deployment.request == *id || self.request_log.binary_search_by(|r| r.id.cmp(id)).is_ok()
    }

    pub fn read_result(&self, id: &RequestId) -> Result<ResultStatus, PcError> {
        if !self.knows(id) {
            return Err(PcError::UnknownRequest(*id));
        }
        Ok(match self.results.get(id) {
            Some(r) => ResultStatus::Ready(r.clone()),
            None => ResultStatus::Pending,
        })
    }

    pub fn can_record(&self, id: &RequestId) -> Result<(), PcError> {
        if !self.knows(id) {
            return Err(PcError::UnknownRequest(*id));
        }
        if self.results.contains_key(id) {
            return Err(PcError::AlreadyRecorded(*id));
        }
        Ok(())
    }

    pub fn record_result(&mut self, id: RequestId, payload: ResultPayload) -> Result<(), PcError> {
        self.can_record(&id)?;
        self.results.insert(id, payload);
        Ok(())
    }

    pub fn results(&self) -> impl Iterator<Item = (&RequestId, &ResultPayload)> {
        self.results.iter()
    }

    /// Requests with `from < block <= to`, in global order.
    pub fn requests_in(&self, from: u64, to: u64) -> impl Iterator<Item = &PcRequest> {
        self.request_log.iter().filter(move |r| r.id.block > from && r.id.block <= to)
    }

    pub fn snapshot(&self) -> PcSnapshot {
        PcSnapshot {
            address: self.address.to_string(),
            owner: self.owner.to_string(),
            deployed_at: self.deployment.request.to_string(),
            requests: self.request_log.len(),
            results: self
                .results
                .iter()
                .map(|(id, r)| (id.to_string(), hash(&codec::encode(r)).to_string()))
                .collect(),
        }
    }
}

#[derive(Serialize)]
pub struct PcSnapshot {
    pub address: String,
    pub owner: String,
    pub deployed_at: String,
    pub requests: usize,
    /// Request id to digest of the recorded result.
    pub results: Vec<(String, String)>,
}
