//! Off-chain replicated blob storage with Random Subnet Threshold Signature
//! (RSTS) confirmation.
//!
//! An executing enclave sends each new ciphertext to a pseudo-random subnet
//! of `s` registered nodes and may only publish once at least `t` of them
//! have returned an acknowledgement signed with their enclave key. The
//! probability that an adversary holding `m` of `n` nodes can fill the
//! threshold on its own is [`rsts_epsilon`].

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use num_rational::BigRational;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, AnalysisError};
use crate::codec;
use crate::crypto::{hash, hash_parts, sign, verify, Digest, Signature, SigningKeyPair, VerifyingKey};
use crate::rng::DetRng;
use crate::types::Address;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BlobKind {
    Info,
    Code,
    State,
    Checkpoint,
    /// Rotated management keys sealed to each peer.
    KeyEnvelope,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageBlob {
    pub digest: Digest,
    pub kind: BlobKind,
    pub ciphertext: Vec<u8>,
}

impl StorageBlob {
    pub fn new(kind: BlobKind, ciphertext: Vec<u8>) -> Self {
        Self { digest: hash(&ciphertext), kind, ciphertext }
    }

    pub fn is_intact(&self) -> bool {
        hash(&self.ciphertext) == self.digest
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confirmation {
    /// Registry position of the confirming node.
    pub index: u32,
    pub node: Address,
    pub signature: Signature,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RstsReceipt {
    pub digest: Digest,
    pub subnet: Vec<u32>,
    /// Sorted by index; set semantics.
    pub confirmations: Vec<Confirmation>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceiptBundle {
    pub blobs: Vec<RstsReceipt>,
    pub key_envelope: Option<RstsReceipt>,
}

impl ReceiptBundle {
    pub fn covers(&self, digest: &Digest) -> bool {
        self.blobs.iter().any(|r| &r.digest == digest)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StorageError {
    #[error("subnet size {s} exceeds node count {n}")]
    SubnetTooLarge { s: usize, n: usize },
    #[error("insufficient confirmations: {got} of {needed}")]
    InsufficientConfirmations { got: usize, needed: usize },
    #[error("blob {0} not found")]
    NotFound(Digest),
    #[error("invalid receipt: {0}")]
    InvalidReceipt(String),
}

pub fn ack_message(digest: &Digest) -> Vec<u8> {
    codec::encode(&(b"racetee/ack", digest))
}

pub fn sign_ack(key: &SigningKeyPair, index: u32, node: Address, digest: &Digest) -> Confirmation {
    Confirmation { index, node, signature: sign(key, &ack_message(digest)) }
}

/// Seed for one blob's subnet: distinct blobs of one round get distinct subnets.
pub fn subnet_seed(round_seed: &Digest, blob: &Digest) -> Digest {
    hash_parts(&[b"racetee/subnet", &round_seed.0, &blob.0])
}

/// `s` distinct indices out of `0..n`, uniform over ordered draws (partial
/// Fisher-Yates driven by `seed`).
pub fn select_subnet(seed: &Digest, n: usize, s: usize) -> Result<Vec<u32>, StorageError> {
    if s > n {
        return Err(StorageError::SubnetTooLarge { s, n });
    }
    let mut rng = DetRng::from_seed(seed.0);
    let mut pool: Vec<u32> = (0..n as u32).collect();
    for i in 0..s {
        let j = i + rng.below((n - i) as u64) as usize;
        pool.swap(i, j);
    }
    pool.truncate(s);
    Ok(pool)
}

/// Checks receipt structure and every acknowledgement signature.
pub fn verify_receipt(
    receipt: &RstsReceipt,
    subnet_size: usize,
    threshold: usize,
    key_of: impl Fn(&Address) -> Option<VerifyingKey>,
) -> Result<(), StorageError> {
    let bad = |m: &str| Err(StorageError::InvalidReceipt(m.to_string()));
    if receipt.subnet.len() != subnet_size {
        return bad("subnet size");
    }
    let subnet: BTreeSet<u32> = receipt.subnet.iter().copied().collect();
    if subnet.len() != receipt.subnet.len() {
        return bad("duplicate subnet member");
    }
    let mut seen = BTreeSet::new();
    let msg = ack_message(&receipt.digest);
    for c in &receipt.confirmations {
        if !subnet.contains(&c.index) {
            return bad("confirmer outside subnet");
        }
        if !seen.insert(c.index) {
            return bad("duplicate confirmation");
        }
        let Some(vk) = key_of(&c.node) else { return bad("confirmer not registered") };
        if !matches!(verify(&vk, &msg, &c.signature), Ok(true)) {
            return bad("bad acknowledgement signature");
        }
    }
    if receipt.confirmations.len() < threshold {
        return Err(StorageError::InsufficientConfirmations {
            got: receipt.confirmations.len(),
            needed: threshold,
        });
    }
    Ok(())
}

/// Collects acknowledgements for one blob until the threshold is reached.
#[derive(Clone, Debug)]
pub struct Dissemination {
    pub digest: Digest,
    pub subnet: Vec<u32>,
    pub threshold: usize,
    pub deadline: u64,
    acks: BTreeMap<u32, Confirmation>,
}

impl Dissemination {
    pub fn new(digest: Digest, subnet: Vec<u32>, threshold: usize, deadline: u64) -> Self {
        Self { digest, subnet, threshold, deadline, acks: BTreeMap::new() }
    }

    /// Records an acknowledgement from a subnet member. Acks from outside the
    /// subnet or with bad signatures are ignored.
    pub fn on_ack(&mut self, ack: Confirmation, key: &VerifyingKey) -> bool {
        if !self.subnet.contains(&ack.index) || self.acks.contains_key(&ack.index) {
            return false;
        }
        if !matches!(verify(key, &ack_message(&self.digest), &ack.signature), Ok(true)) {
            return false;
        }
        self.acks.insert(ack.index, ack);
        true
    }

    pub fn ack_count(&self) -> usize {
        self.acks.len()
    }

    pub fn is_complete(&self) -> bool {
        self.acks.len() >= self.threshold
    }

    /// The receipt, once `threshold` acks are in. Confirmations are the
    /// lowest `threshold` indices so the result does not depend on arrival
    /// order.
    pub fn receipt(&self) -> Result<RstsReceipt, StorageError> {
        if !self.is_complete() {
            return Err(StorageError::InsufficientConfirmations {
                got: self.acks.len(),
                needed: self.threshold,
            });
        }
        Ok(RstsReceipt {
            digest: self.digest,
            subnet: self.subnet.clone(),
            confirmations: self.acks.values().take(self.threshold).cloned().collect(),
        })
    }
}

/// A single node's blob store. Content is immutable after first write.
#[derive(Clone, Debug, Default)]
pub struct BlobStore {
    blobs: BTreeMap<Digest, StorageBlob>,
}

impl BlobStore {
    /// Stores an intact blob; returns false (and stores nothing) otherwise.
    pub fn put(&mut self, blob: StorageBlob) -> bool {
        if !blob.is_intact() {
            return false;
        }
        self.blobs.entry(blob.digest).or_insert(blob);
        true
    }

    pub fn get(&self, digest: &Digest) -> Option<&StorageBlob> {
        self.blobs.get(digest)
    }

    pub fn contains(&self, digest: &Digest) -> bool {
        self.blobs.contains_key(digest)
    }

    pub fn len(&self) -> usize {
        self.blobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blobs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &StorageBlob> {
        self.blobs.values()
    }
}

#[derive(Serialize)]
struct BlobIndexEntry<'a> {
    digest: String,
    kind: BlobKind,
    size: usize,
    holders: &'a [u32],
}

/// Writes `<dir>/<digest>.bin` for every blob plus `<dir>/index.json`.
pub fn dump_blobs(
    dir: &Path,
    blobs: &BTreeMap<Digest, (StorageBlob, Vec<u32>)>,
) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut index = Vec::with_capacity(blobs.len());
    for (digest, (blob, holders)) in blobs {
        std::fs::write(dir.join(format!("{digest}.bin")), &blob.ciphertext)?;
        index.push(BlobIndexEntry { digest: digest.to_string(), kind: blob.kind, size: blob.ciphertext.len(), holders });
    }
    let json = serde_json::to_vec_pretty(&index).map_err(std::io::Error::other)?;
    std::fs::write(dir.join("index.json"), json)
}

/// Exact RSTS attack probability plus its float and log10 forms.
#[derive(Clone, Debug, PartialEq)]
pub struct Epsilon {
    pub exact: BigRational,
    pub approx: f64,
    pub log10: f64,
}

/// Probability that a uniformly drawn `s`-subnet contains at least `t` of the
/// adversary's `m` nodes out of `n`.
pub fn rsts_epsilon(n: u64, m: u64, s: u64, t: u64) -> Result<Epsilon, AnalysisError> {
    let exact: BigRational = analysis::rsts_tail(n, m, s, t)?;
    Ok(Epsilon { approx: analysis::rational_to_f64(&exact), log10: analysis::log10_rational(&exact), exact })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::Zero;

    #[test]
    fn full_subnet_is_everyone() {
        let mut s = select_subnet(&hash(b"x"), 7, 7).unwrap();
        s.sort();
        assert_eq!(s, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn oversize_subnet_is_an_error() {
        assert_eq!(select_subnet(&hash(b"x"), 3, 4), Err(StorageError::SubnetTooLarge { s: 4, n: 3 }));
    }

    #[test]
    fn subnets_are_distinct_for_all_small_shapes() {
        for n in 1..=64usize {
            for s in 0..=n {
                let seed = hash_parts(&[&(n as u64).to_be_bytes(), &(s as u64).to_be_bytes()]);
                let v = select_subnet(&seed, n, s).unwrap();
                let set: BTreeSet<_> = v.iter().collect();
                assert_eq!(set.len(), s);
                assert!(v.iter().all(|&i| (i as usize) < n));
            }
        }
    }

    #[test]
    fn singleton_subnet_frequency_is_uniform() {
        let mut counts = [0u32; 10];
        let trials = 10_000u32;
        for i in 0..trials {
            let v = select_subnet(&hash(&i.to_be_bytes()), 10, 1).unwrap();
            counts[v[0] as usize] += 1;
        }
        // binomial sd at p = 0.1: sqrt(0.09 / 1e4) = 0.003; allow 4 sd
        for c in counts {
            let f = c as f64 / trials as f64;
            assert!((f - 0.1).abs() < 0.012, "{f}");
        }
    }

    fn signer(i: u8) -> SigningKeyPair {
        SigningKeyPair::from_secret_bytes(&[i + 1; 32])
    }

    #[test]
    fn receipt_is_order_independent() {
        let digest = hash(b"blob");
        let subnet = vec![4, 1, 7];
        let acks: Vec<_> = subnet
            .iter()
            .map(|&i| (sign_ack(&signer(i as u8), i, Address([i as u8; 20]), &digest), signer(i as u8).public()))
            .collect();
        let mut a = Dissemination::new(digest, subnet.clone(), 2, 10);
        let mut b = Dissemination::new(digest, subnet.clone(), 2, 10);
        for (c, k) in &acks {
            a.on_ack(c.clone(), k);
        }
        for (c, k) in acks.iter().rev() {
            b.on_ack(c.clone(), k);
        }
        assert_eq!(a.receipt().unwrap(), b.receipt().unwrap());
    }

    #[test]
    fn threshold_counting() {
        let digest = hash(b"blob");
        let mut d = Dissemination::new(digest, vec![0, 1, 2], 3, 10);
        for i in 0..2u32 {
            assert!(d.on_ack(sign_ack(&signer(i as u8), i, Address([i as u8; 20]), &digest), &signer(i as u8).public()));
        }
        assert!(matches!(d.receipt(), Err(StorageError::InsufficientConfirmations { got: 2, needed: 3 })));
        // outsider and bad signature are ignored
        assert!(!d.on_ack(sign_ack(&signer(9), 9, Address([9; 20]), &digest), &signer(9).public()));
        assert!(!d.on_ack(sign_ack(&signer(5), 2, Address([2; 20]), &digest), &signer(2).public()));
        assert!(d.on_ack(sign_ack(&signer(2), 2, Address([2; 20]), &digest), &signer(2).public()));
        let r = d.receipt().unwrap();
        let keys: BTreeMap<Address, VerifyingKey> =
            (0..3u8).map(|i| (Address([i; 20]), signer(i).public())).collect();
        verify_receipt(&r, 3, 3, |a| keys.get(a).copied()).unwrap();
    }

    #[test]
    fn store_rejects_corrupted_blobs() {
        let mut s = BlobStore::default();
        let mut b = StorageBlob::new(BlobKind::State, vec![1, 2, 3]);
        assert!(s.put(b.clone()));
        b.ciphertext.push(0);
        assert!(!s.put(b));
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn epsilon_small_case() {
        let e = rsts_epsilon(10, 4, 5, 4).unwrap();
        assert_eq!(e.exact, BigRational::new(1.into(), 42.into()));
        assert!(rsts_epsilon(10, 2, 5, 3).unwrap().exact.is_zero());
    }
}
