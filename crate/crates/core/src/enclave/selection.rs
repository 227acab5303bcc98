//! Committee selection: an arithmetic progression over registry positions
//! with a stride coprime to the node count, offset by the round seed.

use num_bigint::BigUint;
use num_integer::Integer;
use thiserror::Error;

use crate::crypto::Digest;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum SelectionError {
    #[error("committee size {c} must satisfy 1 <= c <= n (n = {n})")]
    Parameters { n: u64, c: u64 },
}

fn check(n: u64, c: u64) -> Result<(), SelectionError> {
    if n == 0 || c == 0 || c > n {
        return Err(SelectionError::Parameters { n, c });
    }
    Ok(())
}

/// `floor(n / c)`.
pub fn committee_stride(n: u64, c: u64) -> Result<u64, SelectionError> {
    check(n, c)?;
    Ok(n / c)
}

/// Smallest `step >= floor(n/c)` with `gcd(step, n) = 1`.
pub fn compute_step(n: u64, c: u64) -> Result<u64, SelectionError> {
    let mut step = committee_stride(n, c)?;
    while step.gcd(&n) != 1 {
        step += 1;
    }
    Ok(step)
}

/// Round seed reduced modulo `n`, reading the digest as a big-endian integer.
pub fn seed_mod(seed: &Digest, n: u64) -> u64 {
    let v = BigUint::from_bytes_be(&seed.0) % BigUint::from(n);
    v.iter_u64_digits().next().unwrap_or(0)
}

/// `o_k = (S mod n + k * step) mod n` for `k in 0..c`.
pub fn select_committee(seed: &Digest, n: u64, c: u64) -> Result<Vec<u64>, SelectionError> {
    let step = compute_step(n, c)?;
    Ok(committee_from_offset(seed_mod(seed, n), n, c, step))
}

pub fn committee_from_offset(offset: u64, n: u64, c: u64, step: u64) -> Vec<u64> {
    (0..c).map(|k| (offset + (k as u128 * step as u128 % n as u128) as u64) % n).collect()
}

/// Whether registry position `my_index` is in the committee for a block
/// with hash `block_hash`.
pub fn am_i_selected(my_index: u64, block_hash: &Digest, n: u64, c: u64) -> bool {
    let c = c.min(n);
    select_committee(block_hash, n, c).map(|v| v.contains(&my_index)).unwrap_or(false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_examples() {
        assert_eq!(compute_step(10, 3), Ok(3));
        assert_eq!(compute_step(9, 3), Ok(4));
        assert_eq!(compute_step(1, 1), Ok(1));
        assert!(compute_step(0, 1).is_err());
        assert!(compute_step(5, 0).is_err());
        assert!(compute_step(3, 4).is_err());
    }

    #[test]
    fn offset_seven() {
        assert_eq!(committee_from_offset(7, 10, 3, 3), vec![7, 0, 3]);
    }

    #[test]
    fn seed_reduction_reads_big_endian() {
        let mut d = Digest::default();
        d.0[31] = 17;
        assert_eq!(seed_mod(&d, 10), 7);
        d.0[30] = 1; // 256 + 17 = 273
        assert_eq!(seed_mod(&d, 10), 3);
    }

    #[test]
    fn single_node_is_always_selected() {
        for i in 0..50u8 {
            assert!(am_i_selected(0, &crate::crypto::hash(&[i]), 1, 1));
        }
    }
}
