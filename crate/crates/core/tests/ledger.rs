use racetee::crypto::{hash, Digest, SigningKeyPair};
use racetee::enclave::{verify_block, BlockRejection};
use racetee::ledger::{
    merkle_root, prove, verify_inclusion, verify_proof, Block, Ledger, SignedTransaction, SubmitError, TxBody,
};
use racetee::onchain::{tx_cost, ChainParams, PlainTransfer, TxEffect};
use racetee::rng::DetRng;
use racetee::types::Address;

fn params() -> ChainParams {
    ChainParams {
        mkrp: 0,
        transition_window: 3,
        min_deposit: 1_000,
        request_fee: 10,
        base_reward: 100,
        rsts_subnet: 3,
        rsts_threshold: 2,
        initial_balance: 5_000,
    }
}

fn transfer(key: &SigningKeyPair, to: Address, amount: u128, nonce: u64) -> SignedTransaction {
    SignedTransaction::new(key, &TxBody::Plain(PlainTransfer { to, amount }), nonce)
}

#[test]
fn merkle_proofs_verify_for_every_leaf() {
    for n in 1..=17usize {
        let items: Vec<Digest> = (0..n).map(|i| hash(&i.to_be_bytes())).collect();
        let root = merkle_root(&items);
        for (i, item) in items.iter().enumerate() {
            let p = prove(&items, i).unwrap();
            assert!(verify_proof(&root, item, &p), "n={n} i={i}");
            assert!(!verify_proof(&root, &hash(b"other"), &p));
        }
        assert!(prove(&items, n).is_err());
    }
}

#[test]
fn merkle_root_depends_on_order() {
    let a = hash(b"a");
    let b = hash(b"b");
    assert_ne!(merkle_root(&[a, b]), merkle_root(&[b, a]));
}

#[test]
fn blocks_chain_and_prove_inclusion() {
    let mut rng = DetRng::from_u64(1);
    let alice = SigningKeyPair::generate(&mut rng);
    let bob = Address([2; 20]);
    let mut l = Ledger::genesis(params(), vec![]).unwrap();
    for i in 1..=3 {
        l.submit(transfer(&alice, bob, 100, i)).unwrap();
    }
    l.produce_block(12);
    l.produce_block(24);
    let b1 = l.get_block(1).unwrap().clone();
    assert_eq!(b1.header.parent_hash, l.get_block(0).unwrap().hash);
    assert_eq!(l.get_block(2).unwrap().header.parent_hash, b1.hash);
    assert_eq!(b1.transactions.len(), 3);
    for (i, tx) in b1.transactions.iter().enumerate() {
        let p = l.prove_inclusion(1, i).unwrap();
        assert!(verify_inclusion(&b1.header, tx, &p));
    }
    assert_eq!(l.chain_head().number, 2);
    let genesis = l.get_block(0).unwrap().hash;
    assert_eq!(verify_block(&b1, &genesis, &genesis), Ok(()));
    assert_eq!(verify_block(&b1, &hash(b"fork"), &genesis), Err(BlockRejection::ChainMismatch));
}

#[test]
fn tampered_blocks_are_refused() {
    let mut rng = DetRng::from_u64(2);
    let alice = SigningKeyPair::generate(&mut rng);
    let mut l = Ledger::genesis(params(), vec![]).unwrap();
    l.submit(transfer(&alice, Address([3; 20]), 1, 1)).unwrap();
    let b = l.produce_block(12).clone();
    let parent = l.get_block(0).unwrap().hash;

    let mut swapped = b.clone();
    swapped.transactions[0] = transfer(&alice, Address([4; 20]), 1, 1);
    assert_eq!(verify_block(&swapped, &parent, &parent), Err(BlockRejection::MerkleMismatch));

    let mut renumbered = b.clone();
    renumbered.header.number = 9;
    assert_eq!(verify_block(&renumbered, &parent, &parent), Err(BlockRejection::HashMismatch));

    let rebuilt = Block::new(1, parent, 12, b.transactions.clone());
    assert_eq!(rebuilt.hash, b.hash);
}

#[test]
fn nonces_and_signatures_gate_submission() {
    let mut rng = DetRng::from_u64(3);
    let alice = SigningKeyPair::generate(&mut rng);
    let mut l = Ledger::genesis(params(), vec![]).unwrap();
    let tx = transfer(&alice, Address([5; 20]), 1, 1);
    l.submit(tx.clone()).unwrap();
    assert_eq!(l.submit(tx.clone()), Err(SubmitError::StaleNonce { last: 1, got: 1 }));
    let mut forged = transfer(&alice, Address([5; 20]), 1, 2);
    forged.payload = transfer(&alice, Address([6; 20]), 1_000, 2).payload;
    assert_eq!(l.submit(forged), Err(SubmitError::BadSignature));
    assert_eq!(l.pending(), 1);
}

#[test]
fn transfers_move_balances_and_charge_by_size() {
    let mut rng = DetRng::from_u64(4);
    let alice = SigningKeyPair::generate(&mut rng);
    let a = Address::from_public_key(&alice.public().0);
    let bob = Address([7; 20]);
    let mut l = Ledger::genesis(params(), vec![]).unwrap();
    l.submit(transfer(&alice, bob, 1_500, 1)).unwrap();
    l.submit(transfer(&alice, bob, 9_999, 2)).unwrap();
    l.produce_block(12);
    let out = l.outcomes(1).unwrap();
    assert_eq!(out[0].result, Ok(TxEffect::Transferred));
    assert!(out[1].result.is_err());
    let tx = &l.get_block(1).unwrap().transactions[0];
    assert_eq!(out[0].cost, 21_000 + 16 * tx.payload.len() as u64);
    assert_eq!(l.state().balance(&a), 3_500);
    assert_eq!(l.state().balance(&bob), 6_500);
}

#[test]
fn cost_counter_is_affine_in_payload_size() {
    for len in [0usize, 1, 100, 4096] {
        assert_eq!(tx_cost(len), 21_000 + 16 * len as u64);
    }
}

#[test]
fn reorg_restores_state_and_requeues() {
    let mut rng = DetRng::from_u64(5);
    let alice = SigningKeyPair::generate(&mut rng);
    let bob = Address([8; 20]);
    let mut l = Ledger::genesis(params(), vec![]).unwrap();
    l.submit(transfer(&alice, bob, 100, 1)).unwrap();
    l.produce_block(12);
    let before = l.state().clone();
    l.submit(transfer(&alice, bob, 200, 2)).unwrap();
    let dropped_hash = l.produce_block(24).hash;
    let dropped = l.reorg_last().unwrap();
    assert_eq!(dropped.hash, dropped_hash);
    assert_eq!(l.state(), &before);
    assert_eq!(l.pending(), 1);
    let again = l.produce_block(30).clone();
    assert_ne!(again.hash, dropped_hash);
    assert_eq!(l.state().balance(&bob), 5_300);
}
