use racetee::sim::scenario::{bundled, Behavior, Scenario, ScriptEntry, BUNDLED};

const BASE: &str = r#"name = "t"
seed = 1
nodes = 3
committee = 2
end_tick = 120
users = ["alice", "bob"]
"#;

fn with(extra: &str) -> String {
    format!("{BASE}{extra}")
}

/// 1-based line of the first occurrence of `needle`.
fn line_of(text: &str, needle: &str) -> usize {
    text[..text.find(needle).unwrap()].matches('\n').count() + 1
}

fn err(text: &str) -> racetee::sim::ScenarioError {
    Scenario::parse(text).expect_err("should be rejected")
}

#[test]
fn every_bundled_scenario_parses_and_round_trips() {
    assert_eq!(BUNDLED.len(), 8);
    for (name, text) in BUNDLED {
        let sc = Scenario::parse(text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(&sc.name, name);
        let again = Scenario::parse(&sc.to_toml()).unwrap();
        assert_eq!(again.to_toml(), sc.to_toml());
        assert!(bundled(name).is_some());
    }
    assert!(bundled("nope").is_none());
}

#[test]
fn defaults_fill_in() {
    let sc = Scenario::parse(BASE).unwrap();
    assert_eq!(sc.block_interval, 12);
    assert_eq!(sc.block_count(), 10);
    assert_eq!(sc.mkrp, 0);
    assert_eq!((sc.rsts.subnet, sc.rsts.threshold), (3, 2));
    assert_eq!(sc.taint.min_match, 16);
    assert_eq!(sc.total_nodes(), 3);
}

#[test]
fn syntax_errors_carry_line_and_column() {
    let text = with("\n[network]\nmax_delay = \"three\"\n");
    let e = err(&text);
    assert_eq!(e.line, Some(line_of(&text, "max_delay")));
    assert!(e.column.is_some());
    assert!(e.to_string().starts_with(&format!("line {}, column", line_of(&text, "max_delay"))));
}

#[test]
fn unknown_fields_are_rejected() {
    let text = with("comittee = 3\n");
    let e = err(&text);
    assert_eq!(e.line, Some(line_of(&text, "comittee")));
    assert!(e.message.contains("comittee"), "{}", e.message);
}

#[test]
fn script_errors_point_at_the_entry() {
    let text = with(
        r#"
[[script]]
action = "deploy"
block = 1
user = "alice"
name = "coin"
program = "token"

[[script]]
action = "invoke"
block = 2
user = "mallory"
contract = "coin"
function = "transfer"
"#,
    );
    let e = err(&text);
    let line = e.line.unwrap();
    assert!(line >= line_of(&text, "action = \"invoke\"") - 1 && line <= line_of(&text, "mallory"), "line {line}");
    assert!(e.message.contains("mallory"));
}

#[test]
fn semantic_checks() {
    let deploy = "\n[[script]]\naction = \"deploy\"\nblock = 2\nuser = \"alice\"\nname = \"coin\"\nprogram = \"token\"\n";
    let cases: Vec<(String, &str)> = vec![
        (BASE.replace("committee = 2", "committee = 4"), "committee"),
        (BASE.replace("end_tick = 120", "end_tick = 5"), "end_tick"),
        (with("\n[rsts]\nsubnet = 2\nthreshold = 3\n"), "threshold"),
        (with("mkrp = 5\ntransition_window = 0\n"), "transition_window"),
        (BASE.replace("[\"alice\", \"bob\"]", "[\"alice\", \"alice\"]"), "duplicate user"),
        (with(&deploy.replace("token", "rocket")), "unknown program"),
        (with(&deploy.replace("block = 2", "block = 11")), "outside"),
        (
            with(&format!("{deploy}\n[[script]]\naction = \"invoke\"\nblock = 2\nuser = \"bob\"\ncontract = \"coin\"\nfunction = \"f\"\n")),
            "must come later",
        ),
        (
            with(&format!("{deploy}\n[[script]]\naction = \"invoke\"\nblock = 1\nuser = \"bob\"\ncontract = \"coin\"\nfunction = \"f\"\n")),
            "ordered",
        ),
        (
            with(&format!("{deploy}\n[[script]]\naction = \"invoke\"\nblock = 3\nuser = \"bob\"\ncontract = \"coin\"\nfunction = \"f\"\nargs = [\"carol\"]\n")),
            "must start with",
        ),
        (with(&deploy.replace("program = \"token\"", "program = \"token\"\nacl = [\"eve\"]")), "unknown identity"),
        (with("\n[[host]]\nnode = 7\nbehaviors = []\n"), "unknown node"),
        (with("\n[[host]]\nnode = 1\nbehaviors = [{ kind = \"dropout\", probability = 1.5 }]\n"), "probability"),
    ];
    for (text, needle) in cases {
        let e = err(&text);
        assert!(e.message.contains(needle), "wanted '{needle}', got '{}'", e.message);
    }
}

#[test]
fn behaviours_and_acl_forward_references() {
    let text = with(
        r#"
[[host]]
node = 1
behaviors = [{ kind = "stale_block", depth = 2 }, { kind = "crash_at", tick = 30 }]

[[script]]
action = "deploy"
block = 1
user = "alice"
name = "coin"
program = "token"
acl = ["alice", "pool"]

[[script]]
action = "deploy"
block = 2
user = "alice"
name = "pool"
program = "token"
"#,
    );
    let sc = Scenario::parse(&text).unwrap();
    assert_eq!(sc.behaviors(1), vec![Behavior::StaleBlock { depth: 2 }, Behavior::CrashAt { tick: 30 }]);
    assert!(sc.behaviors(0).is_empty());
    assert!(matches!(sc.script[0].get_ref(), ScriptEntry::Deploy { ckrp: 1000, .. }));
}
