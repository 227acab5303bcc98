use std::collections::BTreeMap;

use rayon::prelude::*;

use racetee::sim::scenario::{bundled, Scenario};
use racetee::sim::{run_scenario, RunReport, Simulation, TaintLedger};

const RSTS_ATTACK: &str = include_str!("fixtures/rsts_attack.toml");

fn accepted_ranges(r: &RunReport) -> Vec<(u64, u64)> {
    let mut v: Vec<_> = r.publishes.iter().filter(|p| p.accepted).map(|p| (p.included_block, p.start, p.end)).collect();
    v.sort();
    v.into_iter().map(|(_, s, e)| (s, e)).collect()
}

fn assert_tiles(r: &RunReport) {
    let mut leb = 0;
    for (s, e) in accepted_ranges(r) {
        assert_eq!(s, leb, "range ({s}, {e}]");
        leb = e;
    }
    assert_eq!(leb, r.final_leb);
}

#[test]
fn taint_ledger_finds_embedded_secrets() {
    let mut t = TaintLedger::new(16);
    t.register("k", b"0123456789abcdef-secret");
    t.register("short", b"tiny");
    t.observe("clean", &[0u8; 64]);
    let mut dirty = vec![1u8; 40];
    dirty.extend_from_slice(b"0123456789abcdef-secret");
    t.observe("dirty", &dirty);
    t.observe("prefix only", b"0123456789abcdef-secre");
    assert_eq!(t.secret_count(), 1);
    let v = t.check();
    assert_eq!(v.len(), 1);
    assert_eq!((v[0].secret.as_str(), v[0].observation.as_str(), v[0].offset), ("k", "dirty", 40));
}

#[test]
fn one_executor_wins_each_range() {
    let r = run_scenario(bundled("token").unwrap(), None);
    assert!(r.is_clean(), "{:?}", r.invariant_violations);
    assert_tiles(&r);
    assert!(r.availability_gaps.is_empty());
    assert_eq!(r.remunerations.len(), accepted_ranges(&r).len());
    assert_eq!(r.redundant_publishes, r.publishes.iter().filter(|p| !p.accepted).count());
}

#[test]
fn users_read_their_own_results() {
    let r = run_scenario(bundled("auction").unwrap(), None);
    assert!(r.is_clean());
    let close: Vec<_> = r.requests.iter().filter(|q| q.function.as_deref() == Some("close")).collect();
    assert_eq!(close.len(), 2);
    assert_eq!(close[0].outcome.as_deref(), Some("reverted"));
    assert_eq!(close[1].outcome.as_deref(), Some("ok"));
    assert!(close[1].result.as_deref().unwrap().contains("300"));
}

#[test]
fn dropout_round_is_skipped_and_recovered() {
    let r = run_scenario(bundled("dropout_recovery").unwrap(), None);
    assert!(r.is_clean());
    let round8 = r.rounds.iter().find(|x| x.block == 8).unwrap();
    assert!(round8.all_down && !round8.responded);
    assert!(r.publishes.iter().all(|p| p.round != 8));
    assert!(accepted_ranges(&r).contains(&(7, 9)));
    let late: Vec<_> = r.requests.iter().filter(|q| q.included_block == Some(8)).collect();
    assert!(!late.is_empty() && late.iter().all(|q| q.latency == Some(2)));
    assert_tiles(&r);
}

#[test]
fn lagging_view_never_wins() {
    let r = run_scenario(bundled("stale_block_attack").unwrap(), None);
    assert!(r.is_clean());
    let lagging: Vec<_> = r.publishes.iter().filter(|p| p.node == 2).collect();
    assert!(!lagging.is_empty());
    assert!(lagging.iter().all(|p| p.view_lag == 2 && !p.accepted && p.freshness));
    assert_tiles(&r);
}

#[test]
fn withholding_minority_cannot_block_storage() {
    let r = run_scenario(bundled("rsts_coalition").unwrap(), None);
    assert!(r.is_clean());
    assert!(r.availability_gaps.is_empty());
    for d in &r.disseminations {
        if d.acks.len() >= 3 && ![3, 7].contains(&d.executor) {
            assert!(!d.honest_holders.is_empty(), "round {}", d.round);
        }
    }
    assert!(r.nodes.iter().filter(|n| [3, 7].contains(&n.index)).all(|n| !n.abandoned_rounds.is_empty()));
}

/// A withholding executor only asks its own coalition, so it gets a receipt
/// exactly when the subnet holds at least `t` coalition members. Over many
/// subnets that happens at the hypergeometric rate 95/210.
#[test]
fn coalition_receipts_follow_the_hypergeometric_tail() {
    let sc = Scenario::parse(RSTS_ATTACK).unwrap();
    let coalition = 6u32;
    let t = sc.rsts.threshold;
    let mut subnets: BTreeMap<(u64, String, u64), bool> = BTreeMap::new();
    let runs: Vec<(u64, RunReport)> =
        (1..=12u64).into_par_iter().map(|seed| (seed, run_scenario(sc.clone(), Some(seed)))).collect();
    for (seed, r) in runs {
        assert!(r.is_clean(), "seed {seed}: {:?}", r.invariant_violations);
        for d in &r.disseminations {
            let inside = d.subnet.iter().filter(|&&i| i < coalition).count();
            if (d.executor as u32) < coalition {
                assert_eq!(d.acks.len() >= t, inside >= t, "seed {seed} round {}", d.round);
                assert!(d.acks.iter().all(|&a| (a as u32) < coalition));
            }
            subnets.insert((seed, d.digest.to_string(), d.round), inside >= t);
        }
    }
    let n = subnets.len() as f64;
    let p = subnets.values().filter(|&&x| x).count() as f64 / n;
    let want = 95.0 / 210.0;
    let sigma = (want * (1.0 - want) / n).sqrt();
    assert!(n > 500.0, "only {n} subnets");
    assert!((p - want).abs() <= 3.0 * sigma, "rate {p} vs {want} (sigma {sigma})");
}

#[test]
fn host_misbehaviour_keeps_invariants() {
    let text = r#"
name = "hostile"
seed = 5
nodes = 5
committee = 3
end_tick = 360
users = ["alice", "bob"]

[network]
min_delay = 1
max_delay = 4
reorder_window = 2

[[host]]
node = 0
behaviors = [{ kind = "forge_blocks" }]

[[host]]
node = 1
behaviors = [{ kind = "drop_output" }]

[[host]]
node = 2
behaviors = [{ kind = "delay", ticks = 30 }, { kind = "reorder" }]

[[host]]
node = 3
behaviors = [{ kind = "dropout", probability = 0.3 }]

[[script]]
action = "deploy"
block = 1
user = "alice"
name = "coin"
program = "token"

[[script]]
action = "invoke"
block = 2
user = "alice"
contract = "coin"
function = "mint"
args = ["@alice", 500]

[[script]]
action = "invoke"
block = 6
user = "alice"
contract = "coin"
function = "transfer"
args = ["@bob", 120]

[[script]]
action = "invoke"
block = 12
user = "bob"
contract = "coin"
function = "balance_of"
args = ["@bob"]
"#;
    let sc = Scenario::parse(text).unwrap();
    for seed in 0..5 {
        let r = run_scenario(sc.clone(), Some(seed));
        assert!(r.is_clean(), "seed {seed}: {:?}", r.invariant_violations);
        assert!(r.taint_violations.is_empty());
        assert_tiles(&r);
        assert!(r.nodes[0].rejected_blocks > 0, "forged blocks were not refused");
        assert!(r.publishes.iter().filter(|p| p.accepted).all(|p| p.node != 1));
        let bal = r.requests.iter().find(|q| q.function.as_deref() == Some("balance_of")).unwrap();
        assert_eq!(bal.result.as_deref(), Some("120"), "seed {seed}");
    }
}

#[test]
fn nodes_join_and_leave_by_script() {
    let text = r#"
name = "membership"
seed = 2
nodes = 3
committee = 2
end_tick = 240
users = ["alice"]

[[script]]
action = "deploy"
block = 1
user = "alice"
name = "coin"
program = "token"

[[script]]
action = "register_node"
block = 3

[[script]]
action = "withdraw_node"
block = 8
node = 1

[[script]]
action = "invoke"
block = 12
user = "alice"
contract = "coin"
function = "total_supply"
"#;
    let sc = Scenario::parse(text).unwrap();
    assert_eq!(sc.total_nodes(), 4);
    let mut sim = Simulation::new(sc, None);
    let r = sim.run().clone();
    assert!(r.is_clean(), "{:?}", r.invariant_violations);
    assert_tiles(&r);
    assert_eq!(sim.ledger().state().mc.node_list.len(), 3);
    assert_eq!(r.requests.last().unwrap().result.as_deref(), Some("0"));
}

#[test]
fn seeds_change_schedules_not_results() {
    let sc = bundled("token").unwrap();
    let a = run_scenario(sc.clone(), Some(1));
    let b = run_scenario(sc, Some(2));
    assert_ne!(a.rounds, b.rounds);
    assert_eq!(a.plaintext_state_digest, b.plaintext_state_digest);
    let res = |r: &RunReport| r.requests.iter().map(|q| q.result.clone()).collect::<Vec<_>>();
    assert_eq!(res(&a), res(&b));
}

#[test]
fn outputs_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let mut sim = Simulation::new(bundled("compute_cost").unwrap(), None);
    sim.write_outputs(dir.path()).unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["scenario"], "compute_cost");
    let chain = std::fs::read_to_string(dir.path().join("chain.jsonl")).unwrap();
    assert_eq!(chain.lines().count() as u64, sim.run().blocks + 1);
    for line in chain.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(csv.starts_with("script_index,"));
    assert!(std::fs::read_dir(dir.path().join("blobs")).unwrap().count() > 0);
}
