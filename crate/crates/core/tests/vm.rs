use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use racetee::types::Address;
use racetee::vm::{self, swap_output, Acl, Call, ContractProgram, LoadedContract, Value, VmConfig, VmError};

fn addr(b: u8) -> Address {
    Address([b; 20])
}

struct World {
    contracts: BTreeMap<Address, LoadedContract>,
    config: VmConfig,
}

impl World {
    fn new() -> Self {
        Self { contracts: BTreeMap::new(), config: VmConfig::default() }
    }

    fn deploy(&mut self, at: Address, owner: Address, code: &str, params: Vec<Value>, acl: Acl) {
        let program = ContractProgram { code_id: code.into(), init_params: params };
        let (state, _) = vm::deploy(&program, self.config, owner, at);
        self.contracts.insert(at, LoadedContract { program, acl, state: state.unwrap() });
    }

    /// Runs a call and commits it on success.
    fn call(&mut self, caller: Address, target: Address, f: &str, args: Vec<Value>) -> (Result<Value, VmError>, u64) {
        let (r, steps) = vm::invoke(&mut self.contracts, self.config, caller, target, &Call::new(f, args));
        match r {
            Ok(out) => {
                for (a, s) in out.states {
                    self.contracts.get_mut(&a).unwrap().state = s;
                }
                (Ok(out.value), steps)
            }
            Err(e) => (Err(e), steps),
        }
    }

    fn u128(&mut self, caller: Address, target: Address, f: &str, args: Vec<Value>) -> u128 {
        match self.call(caller, target, f, args).0 {
            Ok(Value::U128(v)) => v,
            other => panic!("{f}: {other:?}"),
        }
    }
}

const ALICE: u8 = 1;
const BOB: u8 = 2;
const COIN: u8 = 10;

fn token_world() -> World {
    let mut w = World::new();
    w.deploy(addr(COIN), addr(ALICE), "token", vec![], Acl::Any);
    w.call(addr(ALICE), addr(COIN), "mint", vec![Value::Addr(addr(ALICE)), Value::U128(1_000)]).0.unwrap();
    w
}

#[test]
fn token_transfers_and_reverts_atomically() {
    let mut w = token_world();
    w.call(addr(ALICE), addr(COIN), "transfer", vec![Value::Addr(addr(BOB)), Value::U128(300)]).0.unwrap();
    let before = w.contracts[&addr(COIN)].state.clone();
    let (r, _) = w.call(addr(BOB), addr(COIN), "transfer", vec![Value::Addr(addr(ALICE)), Value::U128(301)]);
    assert!(matches!(r, Err(VmError::Reverted(_))));
    assert_eq!(w.contracts[&addr(COIN)].state, before);
    assert_eq!(w.u128(addr(BOB), addr(COIN), "balance_of", vec![Value::Addr(addr(ALICE))]), 700);
    assert_eq!(w.u128(addr(BOB), addr(COIN), "balance_of", vec![Value::Addr(addr(BOB))]), 300);
    assert_eq!(w.u128(addr(BOB), addr(COIN), "total_supply", vec![]), 1_000);
}

#[test]
fn only_the_owner_mints() {
    let mut w = token_world();
    let (r, _) = w.call(addr(BOB), addr(COIN), "mint", vec![Value::Addr(addr(BOB)), Value::U128(5)]);
    assert!(matches!(r, Err(VmError::Reverted(_))));
}

#[test]
fn acl_is_enforced_on_the_callee() {
    let mut w = World::new();
    let only: BTreeSet<Address> = [addr(ALICE)].into();
    w.deploy(addr(20), addr(ALICE), "compute", vec![], Acl::Only(only));
    assert!(w.call(addr(ALICE), addr(20), "run", vec![Value::U128(3)]).0.is_ok());
    let (r, steps) = w.call(addr(BOB), addr(20), "run", vec![Value::U128(3)]);
    assert!(matches!(r, Err(VmError::AccessDenied { .. })));
    assert!(steps <= vm::STEP_CALL);
}

/// `1 - 2 + 3 - ... ± k` in closed form.
fn alternating(k: u64) -> i128 {
    if k % 2 == 0 {
        -(k as i128) / 2
    } else {
        (k as i128 + 1) / 2
    }
}

#[test]
fn compute_steps_grow_linearly() {
    let mut w = World::new();
    w.deploy(addr(20), addr(ALICE), "compute", vec![], Acl::Any);
    let mut pts = Vec::new();
    for k in [0u64, 1, 2, 7, 100, 1_000, 10_000] {
        let (r, steps) = w.call(addr(ALICE), addr(20), "run", vec![Value::U128(k as u128)]);
        assert_eq!(r.unwrap(), Value::I128(alternating(k)), "k={k}");
        pts.push((k, steps));
    }
    let base = pts[0].1;
    for (k, s) in pts {
        assert_eq!(s - base, k, "k={k}");
    }
}

#[test]
fn step_limit_stops_runaway_code() {
    let mut w = World::new();
    w.config = VmConfig { step_limit: 5_000, ..VmConfig::default() };
    w.deploy(addr(20), addr(ALICE), "compute", vec![], Acl::Any);
    let (r, steps) = w.call(addr(ALICE), addr(20), "spin", vec![]);
    assert_eq!(r, Err(VmError::OutOfSteps));
    assert_eq!(steps, 5_000);
}

#[test]
fn unknown_program_and_function() {
    let program = ContractProgram { code_id: "nope".into(), init_params: vec![] };
    assert!(matches!(vm::deploy(&program, VmConfig::default(), addr(1), addr(2)).0, Err(VmError::UnknownProgram(_))));
    let mut w = token_world();
    assert!(matches!(w.call(addr(ALICE), addr(COIN), "burn", vec![]).0, Err(VmError::UnknownFunction(_))));
}

/// Exact constant-product output with the fee taken from the input.
fn cp_oracle(r_in: u128, r_out: u128, a: u128, fee_bps: u128) -> u128 {
    let eff = a * (10_000 - fee_bps) / 10_000;
    let k = r_in * r_out;
    let new_out = (k + (r_in + eff) - 1) / (r_in + eff);
    r_out - new_out
}

#[test]
fn pool_swaps_across_three_contracts() {
    let (tx, ty, pool) = (addr(30), addr(31), addr(32));
    let mut w = World::new();
    w.deploy(tx, addr(ALICE), "token", vec![], Acl::Any);
    w.deploy(ty, addr(ALICE), "token", vec![], Acl::Any);
    w.deploy(pool, addr(ALICE), "dex", vec![Value::Addr(tx), Value::Addr(ty), Value::U128(30)], Acl::Any);
    for t in [tx, ty] {
        w.call(addr(ALICE), t, "mint", vec![Value::Addr(addr(ALICE)), Value::U128(100_000)]).0.unwrap();
        w.call(addr(ALICE), t, "approve", vec![Value::Addr(pool), Value::U128(u64::MAX as u128)]).0.unwrap();
    }
    w.call(addr(ALICE), pool, "add_liquidity", vec![Value::U128(50_000), Value::U128(20_000)]).0.unwrap();
    let got = w.u128(addr(ALICE), pool, "swap", vec![Value::Addr(tx), Value::U128(1_000)]);
    assert_eq!(got, cp_oracle(50_000, 20_000, 1_000, 30));
    let reserves = w.call(addr(ALICE), pool, "reserves", vec![]).0.unwrap();
    assert_eq!(reserves, Value::List(vec![Value::U128(51_000), Value::U128(20_000 - got)]));
    assert_eq!(w.u128(addr(ALICE), ty, "balance_of", vec![Value::Addr(addr(ALICE))]), 80_000 + got);
    assert_eq!(w.u128(addr(ALICE), tx, "balance_of", vec![Value::Addr(pool)]), 51_000);
}

#[test]
fn failed_inner_call_reverts_the_whole_transaction() {
    let (tx, ty, pool) = (addr(30), addr(31), addr(32));
    let mut w = World::new();
    w.deploy(tx, addr(ALICE), "token", vec![], Acl::Any);
    w.deploy(ty, addr(ALICE), "token", vec![], Acl::Any);
    w.deploy(pool, addr(ALICE), "dex", vec![Value::Addr(tx), Value::Addr(ty), Value::U128(0)], Acl::Any);
    w.call(addr(ALICE), tx, "mint", vec![Value::Addr(addr(ALICE)), Value::U128(10)]).0.unwrap();
    w.call(addr(ALICE), tx, "approve", vec![Value::Addr(pool), Value::U128(10)]).0.unwrap();
    let snapshot: Vec<_> = w.contracts.values().map(|c| c.state.clone()).collect();
    // the second transfer_from fails: no y balance
    let (r, _) = w.call(addr(ALICE), pool, "add_liquidity", vec![Value::U128(10), Value::U128(10)]);
    assert!(r.is_err());
    let after: Vec<_> = w.contracts.values().map(|c| c.state.clone()).collect();
    assert_eq!(snapshot, after);
}

#[test]
fn second_price_auction() {
    let (coin, auction) = (addr(40), addr(41));
    let (seller, b1, b2, b3) = (addr(1), addr(2), addr(3), addr(4));
    let mut w = World::new();
    w.deploy(coin, seller, "token", vec![], Acl::Any);
    w.deploy(auction, seller, "auction", vec![Value::Addr(coin), Value::U128(50)], Acl::Any);
    for (b, amt) in [(b1, 300u128), (b2, 450), (b3, 200)] {
        w.call(seller, coin, "mint", vec![Value::Addr(b), Value::U128(1_000)]).0.unwrap();
        w.call(b, coin, "approve", vec![Value::Addr(auction), Value::U128(amt)]).0.unwrap();
        w.call(b, auction, "bid", vec![Value::U128(amt)]).0.unwrap();
    }
    assert!(w.call(b1, auction, "close", vec![]).0.is_err());
    let r = w.call(seller, auction, "close", vec![]).0.unwrap();
    assert_eq!(r, Value::List(vec![Value::Addr(b2), Value::U128(300)]));
    let bal = |w: &mut World, a| w.u128(seller, coin, "balance_of", vec![Value::Addr(a)]);
    assert_eq!(bal(&mut w, seller), 300);
    assert_eq!(bal(&mut w, b1), 1_000);
    assert_eq!(bal(&mut w, b2), 700);
    assert_eq!(bal(&mut w, b3), 1_000);
    assert_eq!(bal(&mut w, auction), 0);
    assert!(w.call(b1, auction, "bid", vec![Value::U128(1)]).0.is_err());
}

proptest! {
    #[test]
    fn swap_matches_oracle_and_keeps_product(
        r_in in 1u128..1_000_000_000,
        r_out in 1u128..1_000_000_000,
        a in 0u128..1_000_000_000,
        fee in 0u128..=10_000,
    ) {
        let out = swap_output(r_in, r_out, a, fee).unwrap();
        prop_assert_eq!(out, cp_oracle(r_in, r_out, a, fee));
        prop_assert!(out < r_out);
        prop_assert!((r_in + a) * (r_out - out) >= r_in * r_out);
    }
}
