use super::*;

const GOLDEN: &str = include_str!("../../../../scenarios/usecase_bob_john.crtcs");
const FOO1: &str = "class A { int Foo1(int x, int newParam) { return x; } }";

#[test]
fn golden_scenario_shape() {
    let sc = parse_scenario(GOLDEN).unwrap();
    assert_eq!(sc.clients, ["bob", "john"]);
    assert_eq!(sc.files.len(), 1);
    assert_eq!(sc.events.len(), 9);
}

#[test]
fn golden_scenario_passes() {
    let sc = parse_scenario(GOLDEN).unwrap();
    let trace = run(&sc, 0).unwrap();
    assert!(trace.passed(), "{}", trace.to_text());
    // John's attempt is denied within tick 3.
    assert!(trace.events.iter().any(
        |e| matches!(e, TraceEvent::Denied { tick: 3, client, holder, .. } if client == "john" && holder == "bob")
    ));
    // Exactly one propagate, carrying the final text.
    let propagates: Vec<_> = trace.wire_lines().filter(|(_, _, l)| l.contains("\"type\":\"propagate\"")).collect();
    assert_eq!(propagates.len(), 1, "{propagates:?}");
    assert!(trace.events.iter().all(|e| !matches!(e, TraceEvent::Commit { tick, .. } if *tick < 4)));
    let oracle = sequential_replay_oracle(&trace);
    assert_eq!(oracle["file1.toy"], FOO1);
    assert!(check_invariants(&trace).is_empty());
    assert!(check_convergence(&trace).is_empty());
    assert_eq!(run(&sc, 0).unwrap().to_text(), trace.to_text());
}

#[test]
fn failing_assertion_is_recorded() {
    let sc =
        parse_scenario("client a\nfile f.toy \"class A { }\"\nat 1 assert text a f.toy \"class B { }\"\n").unwrap();
    let trace = run(&sc, 0).unwrap();
    assert_eq!(trace.failures().len(), 1);
    assert!(trace.to_text().contains("t1 FAIL assert text a f.toy"));
}

#[test]
fn single_buildable_edit_commits_once() {
    let sc = parse_scenario(
        "client a\nfile f.toy \"class A { int x; }\"\nat 1 a insert f.toy 14 \"y\" expect apply\nat 2 assert converged f.toy\n",
    )
    .unwrap();
    let trace = run(&sc, 0).unwrap();
    assert!(trace.passed(), "{}", trace.to_text());
    assert_eq!(trace.count(|e| matches!(e, TraceEvent::Commit { .. })), 1);
    assert_eq!(trace.count(|e| matches!(e, TraceEvent::Denied { .. } | TraceEvent::LockDenied { .. })), 0);
}

#[test]
fn zero_commit_oracle_is_corpus() {
    let sc = parse_scenario("client a\nfile f.toy \"class A { }\"\n").unwrap();
    let trace = run(&sc, 0).unwrap();
    assert_eq!(sequential_replay_oracle(&trace)["f.toy"], "class A { }");
}

#[test]
fn generator_basics() {
    let empty = generate_random_scenario(5, 2, 0);
    assert!(empty.events.is_empty());
    assert_eq!(empty.clients.len(), 2);
    assert_ne!(generate_random_scenario(1, 2, 20), generate_random_scenario(2, 2, 20));
    let sc = generate_random_scenario(1, 2, 50);
    assert_eq!(parse_scenario(&sc.to_dsl()).unwrap(), sc);
    let trace = run(&sc, 1).unwrap();
    assert!(trace.passed(), "{}", trace.to_text());
    let denies = trace.count(|e| matches!(e, TraceEvent::Denied { .. }));
    let commits = trace.count(|e| matches!(e, TraceEvent::Commit { .. }));
    assert!(denies >= 1 && commits >= 2, "denies {denies} commits {commits}");
}

#[test]
fn fuzz_seeds_hold_invariants() {
    for seed in 1..=20 {
        let sc = generate_random_scenario(seed, 2 + (seed as usize % 2), 50);
        let trace = run(&sc, seed).unwrap();
        let v = check_invariants(&trace);
        assert!(v.is_empty(), "seed {seed}: {v:?}\n{}", trace.to_text());
        let c = check_convergence(&trace);
        assert!(c.is_empty() && trace.passed(), "seed {seed}: {c:?}\n{}", trace.to_text());
    }
}
