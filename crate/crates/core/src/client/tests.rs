use super::*;
use crate::protocol::{decode, encode};
use crate::server::Server;

const FILE1: &str = "class A { int Foo(int x) { return x; } int Bar() { return 2; } }";
const FILE2: &str = "class B { int UsingFoo() { return Foo(1); } }";

struct Net {
    server: Server,
    clients: Vec<ClientCore>,
}

impl Net {
    fn new(files: &[(&str, &str)], names: &[&str]) -> Net {
        let files = files.iter().map(|(n, t)| SourceText::new(*n, *t)).collect();
        let mut net =
            Net { server: Server::new(files).unwrap(), clients: names.iter().map(|n| ClientCore::new(*n)).collect() };
        for i in 0..net.clients.len() {
            net.clients[i].connect();
            net.pump();
        }
        for c in &mut net.clients {
            c.take_events();
        }
        net
    }

    fn pump(&mut self) {
        loop {
            let mut moved = false;
            for i in 0..self.clients.len() {
                for m in self.clients[i].take_outbox() {
                    moved = true;
                    let line = encode(&m).unwrap();
                    for (conn, reply) in self.server.handle_line(i as u64, line.as_bytes()) {
                        let back = decode(encode(&reply).unwrap().as_bytes()).unwrap();
                        self.clients[conn as usize].receive(back);
                    }
                }
            }
            if !moved {
                break;
            }
        }
    }

    fn run(&mut self, who: usize, cmd: Command) -> Vec<ClientEvent> {
        self.clients[who].submit(cmd);
        self.pump();
        self.clients[who].take_events()
    }

    fn insert(&mut self, who: usize, file: &str, offset: usize, text: &str) -> Vec<ClientEvent> {
        self.run(who, Command::Insert { file: file.into(), offset, text: text.into() })
    }
}

fn applied(ev: &[ClientEvent]) -> bool {
    ev.iter().any(|e| matches!(e, ClientEvent::Applied { .. }))
}

#[test]
fn rename_with_cascade_commits_once_buildable() {
    let mut net = Net::new(&[("file1.toy", FILE1), ("file2.toy", FILE2)], &["bob", "john"]);
    let ev = net.insert(0, "file1.toy", 17, "1");
    assert!(applied(&ev), "{ev:?}");
    assert_eq!(net.server.lock_holder(&"A/Foo".parse().unwrap()), Some("bob"));
    assert_eq!(net.server.lock_holder(&"B/UsingFoo".parse().unwrap()), Some("bob"));
    assert_eq!(net.clients[0].is_buildable("file2.toy"), Some(false));
    assert_eq!(net.server.file_version("file1.toy"), Some(0));

    // John cannot touch the cascade while bob holds it.
    let ev = net.insert(1, "file2.toy", 34, " 0 +");
    assert!(ev.iter().any(|e| matches!(e, ClientEvent::Denied { holder, .. } if holder == "bob")), "{ev:?}");
    assert_eq!(net.clients[1].text("file2.toy").unwrap(), FILE2);

    let ev = net.insert(0, "file1.toy", 24, ", int y");
    assert!(applied(&ev), "{ev:?}");
    let ev = net.insert(0, "file2.toy", 37, "1");
    assert!(applied(&ev), "{ev:?}");
    let ev = net.insert(0, "file2.toy", 40, ", 2");
    assert!(ev.iter().any(|e| matches!(e, ClientEvent::CommitSent { files } if files.len() == 2)), "{ev:?}");
    assert!(ev.iter().any(|e| matches!(e, ClientEvent::Committed { version: 1, .. })), "{ev:?}");

    let f1 = "class A { int Foo1(int x, int y) { return x; } int Bar() { return 2; } }";
    let f2 = "class B { int UsingFoo() { return Foo1(1, 2); } }";
    assert_eq!(net.server.file_text("file1.toy"), Some(f1));
    assert_eq!(net.server.file_text("file2.toy"), Some(f2));
    assert_eq!(net.clients[1].text("file1.toy").unwrap(), f1);
    assert_eq!(net.clients[1].text("file2.toy").unwrap(), f2);
    assert!(net.server.locks().is_empty());
    assert!(net.clients[0].locks().is_empty());
    // Foo kept its identity through the rename.
    let foo1 = net.clients[1].base_table().id_of(&"A/Foo1".parse().unwrap());
    assert_eq!(foo1, Some(ElementId(2)));
}

#[test]
fn body_edit_and_new_member() {
    let mut net = Net::new(&[("file1.toy", FILE1)], &["bob"]);
    let two = FILE1.find('2').unwrap();
    let ev = net.insert(0, "file1.toy", two, "1");
    assert!(ev.iter().any(|e| matches!(e, ClientEvent::Committed { .. })), "{ev:?}");
    let end = FILE1.len();
    let ev = net.insert(0, "file1.toy", end, "int z; ");
    assert!(ev.iter().any(|e| matches!(e, ClientEvent::Committed { version: 2, .. })), "{ev:?}");
    let t = net.server.file_text("file1.toy").unwrap().to_string();
    assert!(t.contains("int z; }"), "{t}");
    assert!(net.clients[0].base_table().id_of(&"A/z".parse().unwrap()).is_some());
    assert!(net.server.locks().is_empty());
}

#[test]
fn incoming_snapshot_rebases_local_edit() {
    let mut net = Net::new(&[("file1.toy", FILE1)], &["bob", "john"]);
    // John starts an unbuildable edit in Bar's body.
    let two = FILE1.find('2').unwrap();
    let ev = net.insert(1, "file1.toy", two, "+");
    assert!(applied(&ev));
    assert_eq!(net.clients[1].is_buildable("file1.toy"), Some(false));
    // Bob renames Foo's parameter type region: insert before Foo's body.
    let ev = net.insert(0, "file1.toy", 23, ", int q");
    assert!(ev.iter().any(|e| matches!(e, ClientEvent::Committed { .. })), "{ev:?}");
    net.pump();
    let john = net.clients[1].text("file1.toy").unwrap();
    assert_eq!(john, "class A { int Foo(int x, int q) { return x; } int Bar() { return +2; } }");
    assert!(net.clients[1].is_dirty("file1.toy"));
}

#[test]
fn off_record_edits_stay_local() {
    let mut net = Net::new(&[("file1.toy", FILE1)], &["bob", "john"]);
    let ev = net.run(0, Command::OffRecord);
    assert!(ev.contains(&ClientEvent::ModeChanged { on_record: false }));
    let ev = net.insert(0, "file1.toy", 17, "1");
    assert!(applied(&ev));
    assert!(net.server.locks().is_empty());
    assert_eq!(net.server.file_version("file1.toy"), Some(0));
    assert_eq!(net.clients[1].text("file1.toy").unwrap(), FILE1);

    // John changes Foo meanwhile.
    let ev = net.insert(1, "file1.toy", 23, ", int q");
    assert!(ev.iter().any(|e| matches!(e, ClientEvent::Committed { .. })), "{ev:?}");

    let ev = net.run(0, Command::OnRecord);
    let conflicts = ev.iter().find_map(|e| match e {
        ClientEvent::Reconciled { conflicts, .. } => Some(conflicts.clone()),
        _ => None,
    });
    let conflicts = conflicts.expect("reconciled");
    assert_eq!(conflicts.len(), 1);
    assert_eq!(conflicts[0].element_path, "A/Foo");
    assert!(net.clients[0].is_on_record());
    assert_eq!(net.clients[0].text("file1.toy"), net.server.file_text("file1.toy").map(String::from));
}

#[test]
fn edits_blocked_while_reconciling() {
    let mut c = ClientCore::new("bob");
    c.connect();
    c.receive(Message::new(
        1,
        "s1",
        Body::Welcome(crate::protocol::Welcome {
            session: "s1".into(),
            files: vec![FileSnapshot {
                file_name: "f.toy".into(),
                version: 0,
                text: "class A { }".into(),
                elements: vec![],
            }],
        }),
    ));
    c.submit(Command::OffRecord);
    c.submit(Command::OnRecord);
    c.submit(Command::Insert { file: "f.toy".into(), offset: 0, text: "x".into() });
    let ev = c.take_events();
    assert!(ev
        .iter()
        .any(|e| matches!(e, ClientEvent::Blocked { reason, .. } if reason == "off_record_pending_reconcile")));
}

#[test]
fn insertion_points_are_classified_by_element() {
    let net = Net::new(&[("file1.toy", FILE1)], &["bob"]);
    let c = &net.clients[0];
    let (a, foo, bar) = (ElementId(1), ElementId(2), ElementId(3));
    let table: &[(usize, LockNeed)] = &[
        (0, LockNeed::NewUnder(None)),
        (3, LockNeed::Defining(a)),
        (9, LockNeed::NewUnder(Some(a))),
        (14, LockNeed::Defining(foo)),
        (20, LockNeed::Defining(foo)),
        (29, LockNeed::Touch(foo)),
        (38, LockNeed::NewUnder(Some(a))),
        (39, LockNeed::NewUnder(Some(a))),
        (45, LockNeed::Defining(bar)),
        (56, LockNeed::Touch(bar)),
        (FILE1.len() - 1, LockNeed::NewUnder(Some(a))),
        (FILE1.len(), LockNeed::NewUnder(None)),
    ];
    for (offset, need) in table {
        let edit = Edit { file: "file1.toy".into(), start: *offset, end: *offset, text: "x".into() };
        assert_eq!(c.span_needs(&edit), BTreeSet::from([*need]), "offset {offset}");
    }
    // Deleting whitespace between members needs nothing; deleting into a
    // body touches the member.
    let gap = Edit { file: "file1.toy".into(), start: 38, end: 39, text: String::new() };
    assert!(c.span_needs(&gap).is_empty());
    let body = Edit { file: "file1.toy".into(), start: 54, end: 56, text: String::new() };
    assert_eq!(c.span_needs(&body), BTreeSet::from([LockNeed::Touch(bar)]));
}

#[test]
fn whitespace_insert_takes_a_provisional_member() {
    let mut net = Net::new(&[("file1.toy", FILE1)], &["bob"]);
    let ev = net.insert(0, "file1.toy", 38, " ");
    assert!(applied(&ev), "{ev:?}");
    // The change is buildable, so it has already been committed; the grant
    // is visible in the server's history.
    let grants: Vec<_> = net
        .server
        .drain_events()
        .into_iter()
        .filter_map(|e| match e {
            crate::server::ServerEvent::LockGranted { kind, elements, .. } => Some((kind, elements)),
            _ => None,
        })
        .collect();
    assert_eq!(grants.len(), 1);
    assert_eq!(grants[0].0, LockKind::Body);
    assert!(grants[0].1.iter().all(|e| e.0 > 3), "fresh provisional id");
    assert_eq!(net.server.file_version("file1.toy"), Some(1));
}

#[test]
fn revert_touches_only_its_file() {
    let mut net = Net::new(&[("file1.toy", FILE1), ("file2.toy", FILE2)], &["bob", "john"]);
    // Two unbuildable edits, one per file, each under its own lock.
    let bar = FILE1.find("return 2").unwrap() + "return ".len();
    assert!(applied(&net.insert(0, "file1.toy", bar, "(")));
    let call = FILE2.find("return ").unwrap() + "return ".len();
    assert!(applied(&net.insert(0, "file2.toy", call, "(")));
    assert_eq!(net.clients[0].locks().len(), 2);
    let before = net.clients[0].pending("file2.toy").cloned();
    let ev = net.run(0, Command::Revert { file: "file1.toy".into() });
    assert!(ev.iter().any(|e| matches!(e, ClientEvent::Reverted { .. })));
    assert_eq!(net.clients[0].text("file1.toy").unwrap(), FILE1);
    assert_eq!(net.clients[0].pending("file2.toy").cloned(), before);
    assert_eq!(net.clients[0].locks().len(), 1);
    assert_eq!(net.server.lock_holder(&"A/Bar".parse().unwrap()), None);
    assert_eq!(net.server.lock_holder(&"B/UsingFoo".parse().unwrap()), Some("bob"));
    // Reverting a clean file changes nothing.
    net.run(0, Command::Revert { file: "file1.toy".into() });
    assert_eq!(net.clients[0].locks().len(), 1);
}
