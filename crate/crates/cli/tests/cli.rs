use std::fs;
use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use crtc_core::protocol::{decode, encode, Body, Hello, Message};
use tempfile::TempDir;

fn crtc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crtc")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn corpus(files: &[(&str, &str)]) -> TempDir {
    let dir = TempDir::new().unwrap();
    for (name, text) in files {
        fs::write(dir.path().join(name), text).unwrap();
    }
    dir
}

const FILE1: &str = "class A { int Foo(int x) { return x; } int Bar() { return 1; } }";
const FILE2: &str = "class B { int UsingFoo() { return Foo(1); } }";

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = crtc(&["check", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn check_empty_directory_prints_nothing() {
    let dir = TempDir::new().unwrap();
    let o = crtc(&["check", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "");
}

#[test]
fn check_buildable_and_typo() {
    let dir = corpus(&[("file1.toy", FILE1), ("file2.toy", FILE2)]);
    let o = crtc(&["check", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "file1.toy: buildable\nfile2.toy: buildable\n");

    let typo = "class A { int Foo(int x, in newParam) { return x; } }";
    let dir = corpus(&[("file1.toy", typo)]);
    let o = crtc(&["check", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let col = typo.find("in newParam").unwrap() + 1;
    assert!(stdout(&o).contains(&format!("file1.toy:1:{col}: UnknownType")), "{}", stdout(&o));
}

#[test]
fn check_resolves_across_files() {
    let dir = corpus(&[("file2.toy", FILE2)]);
    let o = crtc(&["check", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("UnresolvedName"));
}

#[test]
fn deps_lists_breakable_sets() {
    let dir = corpus(&[("file1.toy", FILE1), ("file2.toy", FILE2)]);
    let d = dir.path().to_str().unwrap();
    let o = crtc(&["deps", "--corpus", d]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "A/Bar -> {}\nA/Foo -> {B/UsingFoo}\nB/UsingFoo -> {}\n");
    assert_eq!(stdout(&crtc(&["deps", "--corpus", d, "A/Foo"])), "A/Foo -> {B/UsingFoo}\n");
    assert_eq!(crtc(&["deps", "--corpus", d, "A/Nope"]).status.code(), Some(2));
}

#[test]
fn deps_matches_a_text_scan_of_the_fixture() {
    let dir = root().join("crates/core/tests/fixtures/deps");
    let o = crtc(&["deps", "--corpus", dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let mut members = Vec::new();
    for entry in fs::read_dir(&dir).unwrap() {
        let text = fs::read_to_string(entry.unwrap().path()).unwrap();
        let mut class = "";
        for line in text.lines().map(str::trim) {
            if let Some(rest) = line.strip_prefix("class ") {
                class = rest.split_whitespace().next().unwrap();
            } else if let Some(rest) = line.strip_prefix("int ") {
                let name: String = rest.chars().take_while(|c| c.is_alphanumeric() || *c == '_').collect();
                members.push((format!("{class}/{name}"), name, line.to_string()));
            }
        }
    }
    let mut expected: Vec<String> = members
        .iter()
        .map(|(path, name, _)| {
            let mut users: Vec<&str> = members
                .iter()
                .filter(|(p, _, l)| {
                    p != path && l.split(|c: char| !(c.is_alphanumeric() || c == '_')).any(|w| w == name)
                })
                .map(|(p, _, _)| p.as_str())
                .collect();
            users.sort();
            format!("{path} -> {{{}}}", users.join(", "))
        })
        .collect();
    expected.sort();
    assert_eq!(stdout(&o).lines().collect::<Vec<_>>(), expected);
}

#[test]
fn sim_exit_codes() {
    let golden = root().join("scenarios/usecase_bob_john.crtcs");
    assert_eq!(crtc(&["sim", "--scenario", golden.to_str().unwrap()]).status.code(), Some(0));

    let dir = TempDir::new().unwrap();
    let never = dir.path().join("never.crtcs");
    fs::write(&never, "client bob\nfile a.toy \"class A { }\"\nat 1 assert text bob a.toy \"class B { }\"\n").unwrap();
    assert_eq!(crtc(&["sim", "--scenario", never.to_str().unwrap()]).status.code(), Some(1));

    let broken = dir.path().join("broken.crtcs");
    fs::write(&broken, "at 1 nobody offrecord\n").unwrap();
    assert_eq!(crtc(&["sim", "--scenario", broken.to_str().unwrap()]).status.code(), Some(2));

    let o = crtc(&["sim", "--fuzz", "3", "--seed", "5", "--clients", "2"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().filter(|l| l.contains(": ok")).count(), 3);
}

struct Served {
    child: Child,
    tcp: String,
    ws: String,
}

impl Drop for Served {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn serve(dir: &Path) -> Served {
    let mut child = Command::new(env!("CARGO_BIN_EXE_crtc"))
        .args(["serve", "--corpus", dir.to_str().unwrap(), "--port", "0", "--ui-port", "0"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut banner = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut banner).unwrap();
    let field = |k: &str| banner.split_whitespace().find_map(|w| w.strip_prefix(k)).unwrap().to_string();
    Served { tcp: field("tcp="), ws: field("ws="), child }
}

#[test]
fn serve_rejects_unbuildable_corpus() {
    let dir = corpus(&[("file2.toy", FILE2)]);
    let o = crtc(&["serve", "--corpus", dir.path().to_str().unwrap(), "--port", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("UnresolvedName"));
}

#[test]
fn serve_reports_occupied_port() {
    let dir = corpus(&[("file1.toy", FILE1)]);
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let o = crtc(&["serve", "--corpus", dir.path().to_str().unwrap(), "--port", &port]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn serve_exits_cleanly_on_interrupt() {
    let dir = corpus(&[("file1.toy", FILE1)]);
    let mut s = serve(dir.path());
    let status = Command::new("kill").args(["-INT", &s.child.id().to_string()]).status().unwrap();
    assert!(status.success());
    assert_eq!(s.child.wait().unwrap().code(), Some(0));
}

#[test]
fn scripted_client_runs_bob_over_tcp() {
    let dir = corpus(&[("file1.toy", "class A { int Foo(int x) { return x; } }")]);
    let s = serve(dir.path());
    let golden = root().join("scenarios/usecase_bob_john.crtcs");
    let o = crtc(&["client", "--server", &s.tcp, "--name", "bob", "--script", golden.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("pass at 4 assert converged file1.toy"), "{out}");
    assert!(!out.contains("FAIL"));
}

#[test]
fn scripted_client_fails_on_wrong_expectation() {
    let dir = corpus(&[("a.toy", "class A { int F() { return 1; } }")]);
    let s = serve(dir.path());
    let script = dir.path().join("s.crtcs");
    fs::write(&script, "client bob\nat 1 bob insert a.toy 28 \"2\" expect deny\n").unwrap();
    let o = crtc(&["client", "--server", &s.tcp, "--name", "bob", "--script", script.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn websocket_speaks_the_same_schema() {
    let dir = corpus(&[("file1.toy", FILE1)]);
    let s = serve(dir.path());
    let (mut ws, _) = tungstenite::connect(format!("ws://{}", s.ws)).unwrap();
    let hello = encode(&Message::new(1, "", Body::Hello(Hello { name: "carol".into() }))).unwrap();
    ws.send(tungstenite::Message::Text(hello.trim_end().to_string())).unwrap();
    let reply = loop {
        if let tungstenite::Message::Text(t) = ws.read().unwrap() {
            break t;
        }
    };
    let msg = decode(reply.as_bytes()).unwrap();
    let Body::Welcome(w) = msg.body else { panic!("expected welcome, got {reply}") };
    assert_eq!(w.files[0].text, FILE1);
}
