use crtc_core::protocol::{Conflict, ConflictKind};
use crtc_core::sim::{check_invariants, parse_scenario, run, Trace, TraceEvent};

const FILE1: &str = "class A { int Foo(int x) { return x; } int Bar() { return 2; } }";

fn play(body: &str) -> Trace {
    let dsl = format!("client bob\nclient john\nfile file1.toy \"{FILE1}\"\n{body}");
    let trace = run(&parse_scenario(&dsl).unwrap(), 0).unwrap();
    assert!(trace.passed(), "{}", trace.to_text());
    assert_eq!(check_invariants(&trace), vec![]);
    trace
}

fn reports(trace: &Trace) -> Vec<Vec<Conflict>> {
    trace
        .events
        .iter()
        .filter_map(|e| match e {
            TraceEvent::Reconciled { client, conflicts, .. } if client == "bob" => Some(conflicts.clone()),
            _ => None,
        })
        .collect()
}

#[test]
fn no_edits_gives_empty_report() {
    let t = play("at 1 bob offrecord\nat 2 bob onrecord\nat 2 assert converged file1.toy\n");
    assert_eq!(reports(&t), vec![vec![]]);
}

#[test]
fn disjoint_edits_give_empty_report() {
    let bar = FILE1.find("return 2").unwrap() + "return ".len();
    let foo = FILE1.find("return x").unwrap() + "return ".len();
    let t = play(&format!(
        "at 1 bob offrecord
at 2 bob insert file1.toy {bar} \"5 + \" expect apply
at 2 assert locked file1.toy A/Bar by nobody
at 3 john insert file1.toy {foo} \"1 + \" expect apply
at 4 bob onrecord
at 4 assert converged file1.toy
at 4 assert text bob file1.toy \"class A {{ int Foo(int x) {{ return 1 + x; }} int Bar() {{ return 2; }} }}\"
"
    ));
    assert_eq!(reports(&t), vec![vec![]]);
}

#[test]
fn both_changed_element_is_reported() {
    let foo_body = FILE1.find("return x").unwrap() + "return ".len();
    let foo_name = FILE1.find("Foo").unwrap() + 3;
    let t = play(&format!(
        "at 1 bob offrecord
at 2 bob insert file1.toy {foo_body} \"7 + \" expect apply
at 3 john insert file1.toy {foo_name} \"1\" expect apply
at 4 bob onrecord
at 4 assert converged file1.toy
"
    ));
    let expected =
        Conflict { file_name: "file1.toy".into(), element_path: "A/Foo".into(), kind: ConflictKind::BothChanged };
    assert_eq!(reports(&t), vec![vec![expected]]);
}
