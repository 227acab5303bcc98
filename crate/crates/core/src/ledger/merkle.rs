//! Binary Merkle tree over transaction digests. An odd node at the end of a
//! level is promoted unchanged to the next level.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{hash, hash_parts, Digest};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

/// Sibling path from a leaf to the root. `Side` says where the sibling sits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MerkleProof {
    pub leaf_index: usize,
    pub sibling_path: Vec<(Digest, Side)>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("leaf index {index} out of range for {len} leaves")]
pub struct IndexOutOfRange {
    pub index: usize,
    pub len: usize,
}

pub fn empty_root() -> Digest {
    hash(b"racetee/merkle/empty")
}

pub fn leaf_hash(item: &Digest) -> Digest {
    hash_parts(&[b"leaf", &item.0])
}

fn node_hash(l: &Digest, r: &Digest) -> Digest {
    hash_parts(&[b"node", &l.0, &r.0])
}

fn next_level(level: &[Digest]) -> Vec<Digest> {
    level
        .chunks(2)
        .map(|p| if p.len() == 2 { node_hash(&p[0], &p[1]) } else { p[0] })
        .collect()
}

pub fn merkle_root(items: &[Digest]) -> Digest {
    if items.is_empty() {
        return empty_root();
    }
    let mut level: Vec<Digest> = items.iter().map(leaf_hash).collect();
    while level.len() > 1 {
        level = next_level(&level);
    }
    level[0]
}

pub fn prove(items: &[Digest], index: usize) -> Result<MerkleProof, IndexOutOfRange> {
    if index >= items.len() {
        return Err(IndexOutOfRange { index, len: items.len() });
    }
    let mut level: Vec<Digest> = items.iter().map(leaf_hash).collect();
    let mut pos = index;
    let mut path = Vec::new();
    while level.len() > 1 {
        let sib = pos ^ 1;
        if sib < level.len() {
            let side = if sib < pos { Side::Left } else { Side::Right };
            path.push((level[sib], side));
        }
        level = next_level(&level);
        pos /= 2;
    }
    Ok(MerkleProof { leaf_index: index, sibling_path: path })
}

/// Folds the path from `item` and compares with `root`.
pub fn verify_proof(root: &Digest, item: &Digest, proof: &MerkleProof) -> bool {
    let acc = proof.sibling_path.iter().fold(leaf_hash(item), |acc, (sib, side)| match side {
        Side::Left => node_hash(sib, &acc),
        Side::Right => node_hash(&acc, sib),
    });
    acc == *root
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(n: usize) -> Vec<Digest> {
        (0..n as u64).map(|i| hash(&i.to_be_bytes())).collect()
    }

    #[test]
    fn every_leaf_proves_for_small_trees() {
        for n in 1..40 {
            let it = items(n);
            let root = merkle_root(&it);
            for i in 0..n {
                let p = prove(&it, i).unwrap();
                assert!(verify_proof(&root, &it[i], &p), "n={n} i={i}");
                if n > 1 {
                    assert!(!verify_proof(&root, &it[(i + 1) % n], &p));
                }
            }
        }
    }

    #[test]
    fn out_of_range() {
        assert_eq!(prove(&items(3), 3), Err(IndexOutOfRange { index: 3, len: 3 }));
        assert!(prove(&[], 0).is_err());
    }
}
