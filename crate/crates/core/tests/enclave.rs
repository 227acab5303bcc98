use num_integer::Integer;

use racetee::crypto::{hash, Digest, KeyRole, SymmetricKey};
use racetee::enclave::client::{open_result, seal_result, ResultPlain, RequestError};
use racetee::enclave::selection::{am_i_selected, committee_stride, compute_step, seed_mod, select_committee};
use racetee::enclave::{Enclave, EnclaveConfig};
use racetee::onchain::ChainParams;
use racetee::types::{Address, RequestId};
use racetee::vm::{Value, VmConfig};

#[test]
fn step_is_the_smallest_coprime_at_or_above_the_stride() {
    for n in 1..=300u64 {
        for c in 1..=n {
            let step = compute_step(n, c).unwrap();
            let stride = committee_stride(n, c).unwrap();
            assert_eq!(stride, n / c);
            assert!(step >= stride);
            assert_eq!(step.gcd(&n), 1, "n={n} c={c}");
            assert!((stride..step).all(|x| x.gcd(&n) != 1));
        }
    }
    assert!(compute_step(4, 5).is_err());
    assert!(compute_step(0, 0).is_err());
}

#[test]
fn seed_reduction_reads_big_endian() {
    let mut d = [0u8; 32];
    d[31] = 13;
    assert_eq!(seed_mod(&Digest(d), 10), 3);
    d[30] = 1; // 256 + 13
    assert_eq!(seed_mod(&Digest(d), 10), 9);
    assert_eq!(seed_mod(&Digest([0xff; 32]), 1), 0);
}

#[test]
fn committee_is_an_arithmetic_progression() {
    let seed = hash(b"block 17");
    let (n, c) = (20u64, 4u64);
    let v = select_committee(&seed, n, c).unwrap();
    let (o, step) = (seed_mod(&seed, n), compute_step(n, c).unwrap());
    for (k, &x) in v.iter().enumerate() {
        assert_eq!(x, (o + k as u64 * step) % n);
    }
    for i in 0..n {
        assert_eq!(am_i_selected(i, &seed, n, c), v.contains(&i));
    }
}

#[test]
fn results_open_only_for_their_contract_and_key() {
    let k = SymmetricKey::from_bytes([4; 32], KeyRole::Result, 0);
    let plain = ResultPlain { request: RequestId { block: 3, index: 1 }, outcome: Ok(Value::U128(42)), steps: 7 };
    let a = Address([1; 20]);
    let ct = seal_result(&k, &a, &plain).unwrap();
    assert_eq!(open_result(&k, &a, &ct).unwrap(), plain);
    assert!(open_result(&k, &Address([2; 20]), &ct).is_err());
    assert!(open_result(&SymmetricKey::from_bytes([5; 32], KeyRole::Result, 0), &a, &ct).is_err());
    let failed = ResultPlain { outcome: Err(RequestError::StaleKey), ..plain };
    let ct2 = seal_result(&k, &a, &failed).unwrap();
    assert_eq!(open_result(&k, &a, &ct2).unwrap().outcome, Err(RequestError::StaleKey));
}

fn config() -> EnclaveConfig {
    EnclaveConfig {
        committee: 2,
        vm: VmConfig::default(),
        publish_empty: true,
        rsts_timeout: 24,
        chain: ChainParams {
            mkrp: 0,
            transition_window: 3,
            min_deposit: 1_000,
            request_fee: 10,
            base_reward: 100,
            rsts_subnet: 1,
            rsts_threshold: 1,
            initial_balance: 1_000_000,
        },
        genesis_hash: Digest::default(),
    }
}

#[test]
fn identity_is_seeded_and_survives_sealing() {
    let op = Address([7; 20]);
    let a = Enclave::launch(config(), [1; 32], op);
    let b = Enclave::launch(config(), [1; 32], op);
    let c = Enclave::launch(config(), [2; 32], op);
    assert_eq!(a.public_key(), b.public_key());
    assert_ne!(a.public_key(), c.public_key());

    let mut a = a;
    let reg = a.bootstrap_registration(5_000);
    assert_eq!(reg.endorser, op);
    assert_eq!(reg.initial_tx_key.map(|k| k.epoch), Some(0));
    assert_eq!(a.key_epochs(), vec![0]);

    let resumed = Enclave::resume(config(), a.sealed());
    assert_eq!(resumed.public_key(), a.public_key());
    assert_eq!(resumed.key_epochs(), vec![0]);
    assert_eq!(resumed.operator(), op);
    // nothing but keys survives: the chain mirror starts over
    assert_eq!(resumed.mirror().height(), None);
}

#[test]
fn secrets_are_reported_for_taint_scanning() {
    let mut e = Enclave::launch(config(), [3; 32], Address([8; 20]));
    e.bootstrap_registration(5_000);
    let s = e.drain_secrets();
    assert!(s.iter().any(|(l, _)| l.starts_with("node_key/")));
    assert!(s.iter().any(|(l, _)| l.starts_with("mgmt/0/")));
    assert!(s.iter().all(|(_, b)| b.len() >= 16));
    assert!(e.drain_secrets().is_empty());
}
