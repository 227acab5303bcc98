//! Taint ledger: registered secret byte patterns against every byte
//! sequence an adversary could observe.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::Serialize;

use crate::crypto::{hash, Digest};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct TaintViolation {
    pub secret: String,
    pub observation: String,
    pub offset: usize,
}

#[derive(Clone, Debug)]
pub struct TaintLedger {
    min_match: usize,
    secrets: Vec<(String, Vec<u8>)>,
    secret_seen: HashSet<Digest>,
    observations: Vec<(String, Vec<u8>)>,
    observed: HashSet<Digest>,
}

impl TaintLedger {
    pub fn new(min_match: usize) -> Self {
        Self {
            min_match: min_match.max(1),
            secrets: Vec::new(),
            secret_seen: HashSet::new(),
            observations: Vec::new(),
            observed: HashSet::new(),
        }
    }

    /// Patterns shorter than the floor are ignored.
    pub fn register(&mut self, id: impl Into<String>, bytes: &[u8]) {
        if bytes.len() < self.min_match || !self.secret_seen.insert(hash(bytes)) {
            return;
        }
        self.secrets.push((id.into(), bytes.to_vec()));
    }

    /// Identical byte sequences are kept once, under the first label.
    pub fn observe(&mut self, label: impl Into<String>, bytes: &[u8]) {
        if bytes.len() < self.min_match || !self.observed.insert(hash(bytes)) {
            return;
        }
        self.observations.push((label.into(), bytes.to_vec()));
    }

    pub fn secrets(&self) -> &[(String, Vec<u8>)] {
        &self.secrets
    }

    pub fn secret_count(&self) -> usize {
        self.secrets.len()
    }

    pub fn observation_count(&self) -> usize {
        self.observations.len()
    }

    /// Every (secret, observation) pair where the secret occurs as a
    /// contiguous subsequence, first offset only.
    pub fn check(&self) -> Vec<TaintViolation> {
        let k = self.min_match;
        let mut index: HashMap<&[u8], Vec<usize>> = HashMap::new();
        for (i, (_, s)) in self.secrets.iter().enumerate() {
            index.entry(&s[..k]).or_default().push(i);
        }
        let mut found: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for (oi, (_, obs)) in self.observations.iter().enumerate() {
            if obs.len() < k {
                continue;
            }
            for off in 0..=obs.len() - k {
                let Some(cands) = index.get(&obs[off..off + k]) else { continue };
                for &si in cands {
                    let s = &self.secrets[si].1;
                    if obs.len() - off >= s.len() && &obs[off..off + s.len()] == s.as_slice() {
                        found.entry((si, oi)).or_insert(off);
                    }
                }
            }
        }
        let out: BTreeSet<TaintViolation> = found
            .into_iter()
            .map(|((si, oi), offset)| TaintViolation {
                secret: self.secrets[si].0.clone(),
                observation: self.observations[oi].0.clone(),
                offset,
            })
            .collect();
        out.into_iter().collect()
    }
}
