//! Single-client scenario runner over TCP.
//!
//! Runs the statements of a scenario that belong to `--name`. After each
//! tick the client drains the connection until it is idle and the server
//! has been quiet for a short while, then evaluates that tick's checks.
//! Locks held by other sessions are not observable from here, so
//! `assert locked` is only checked when the named holder is this client.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::Path;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use crtc_core::client::{ClientCore, ClientEvent, Command};
use crtc_core::protocol::{decode, encode};
use crtc_core::sim::{parse_scenario, Action, Expect};
use crtc_core::toylang::ElementPath;

const QUIET: Duration = Duration::from_millis(150);
const SETTLE_LIMIT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Applied,
    Denied,
    Other,
}

/// A statement to evaluate after its tick settles.
type Check = (String, Option<(u64, Expect)>, Option<Action>);

struct Link {
    core: ClientCore,
    stream: TcpStream,
    rx: Receiver<Option<Vec<u8>>>,
    outcomes: BTreeMap<u64, Outcome>,
    joined: bool,
    failed_join: Option<String>,
}

impl Link {
    fn flush(&mut self) -> std::io::Result<()> {
        for m in self.core.take_outbox() {
            let line = encode(&m).map_err(std::io::Error::other)?;
            self.stream.write_all(line.as_bytes())?;
        }
        for ev in self.core.take_events() {
            match &ev {
                ClientEvent::Joined { .. } => self.joined = true,
                ClientEvent::Applied { cmd, .. } => {
                    self.outcomes.insert(*cmd, Outcome::Applied);
                }
                ClientEvent::Denied { cmd, .. } => {
                    self.outcomes.insert(*cmd, Outcome::Denied);
                }
                ClientEvent::Blocked { cmd, .. } => {
                    self.outcomes.insert(*cmd, Outcome::Other);
                }
                ClientEvent::ServerError { code, message } if !self.joined => {
                    self.failed_join = Some(format!("{code}: {message}"));
                }
                _ => {}
            }
            eprintln!("{}: {ev:?}", self.core.name());
        }
        Ok(())
    }

    /// Processes incoming messages until the client is idle and the wire
    /// has been quiet for `QUIET`.
    fn settle(&mut self) -> Result<(), String> {
        let start = Instant::now();
        loop {
            self.flush().map_err(|e| e.to_string())?;
            if start.elapsed() > SETTLE_LIMIT {
                return Err("timed out waiting for the server".into());
            }
            match self.rx.recv_timeout(QUIET) {
                Ok(Some(line)) => match decode(&line) {
                    Ok(msg) => self.core.receive(msg),
                    Err(e) => eprintln!("crtc: ignoring bad frame: {e}"),
                },
                Ok(None) | Err(RecvTimeoutError::Disconnected) => return Err("server closed the connection".into()),
                Err(RecvTimeoutError::Timeout) => {
                    if self.core.is_idle() && (self.joined || self.failed_join.is_some()) {
                        return Ok(());
                    }
                }
            }
        }
    }
}

pub fn run_client(server: &str, name: &str, script: &Path) -> u8 {
    let scenario = match std::fs::read_to_string(script)
        .map_err(|e| e.to_string())
        .and_then(|t| parse_scenario(&t).map_err(|e| e.to_string()))
    {
        Ok(s) => s,
        Err(e) => {
            eprintln!("crtc: {}: {e}", script.display());
            return 2;
        }
    };
    let stream = match TcpStream::connect(server) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("crtc: cannot connect to {server}: {e}");
            return 2;
        }
    };
    let Ok(read_half) = stream.try_clone() else { return 2 };
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for line in BufReader::new(read_half).split(b'\n') {
            match line {
                Ok(l) if l.is_empty() => {}
                Ok(l) => {
                    if tx.send(Some(l)).is_err() {
                        return;
                    }
                }
                Err(_) => break,
            }
        }
        let _ = tx.send(None);
    });

    let mut link =
        Link { core: ClientCore::new(name), stream, rx, outcomes: BTreeMap::new(), joined: false, failed_join: None };
    link.core.connect();
    if let Err(e) = link.settle() {
        eprintln!("crtc: {e}");
        return 2;
    }
    if let Some(e) = link.failed_join {
        eprintln!("crtc: join refused: {e}");
        return 2;
    }

    let mine = |c: &str| c == name;
    let mut failures = 0;
    let mut ticks: Vec<u64> = scenario.events.iter().map(|e| e.tick).collect();
    ticks.dedup();
    for tick in ticks {
        let mut checks: Vec<Check> = Vec::new();
        for ev in scenario.events.iter().filter(|e| e.tick == tick) {
            let statement = format!("at {tick} {}", ev.action);
            let a = &ev.action;
            let cmd = match a {
                Action::Insert { client, file, offset, text, expect } if mine(client) => {
                    Some((Command::Insert { file: file.clone(), offset: *offset, text: text.clone() }, *expect))
                }
                Action::Delete { client, file, offset, len, expect } if mine(client) => {
                    Some((Command::Delete { file: file.clone(), offset: *offset, len: *len }, *expect))
                }
                Action::Revert { client, file } if mine(client) => Some((Command::Revert { file: file.clone() }, None)),
                Action::OffRecord { client } if mine(client) => Some((Command::OffRecord, None)),
                Action::OnRecord { client } if mine(client) => Some((Command::OnRecord, None)),
                Action::AssertBuildable { client, .. } | Action::AssertText { client, .. } if mine(client) => {
                    checks.push((statement.clone(), None, Some(a.clone())));
                    None
                }
                Action::AssertConverged { .. } => {
                    checks.push((statement.clone(), None, Some(a.clone())));
                    None
                }
                Action::AssertLocked { holder, .. } if holder.as_deref() == Some(name) => {
                    checks.push((statement.clone(), None, Some(a.clone())));
                    None
                }
                Action::AssertLocked { .. } => {
                    eprintln!("skip {statement} (other sessions' locks are not visible to a client)");
                    None
                }
                _ => None,
            };
            if let Some((cmd, expect)) = cmd {
                let id = link.core.submit(cmd);
                if let Some(e) = expect {
                    checks.push((statement, Some((id, e)), None));
                }
            }
        }
        if let Err(e) = link.settle() {
            eprintln!("crtc: {e}");
            return 2;
        }
        for (statement, expect, assertion) in checks {
            let (ok, detail) = match (expect, assertion) {
                (Some((id, e)), _) => {
                    let got = link.outcomes.get(&id).copied();
                    let ok = matches!(
                        (e, got),
                        (Expect::Apply, Some(Outcome::Applied)) | (Expect::Deny, Some(Outcome::Denied))
                    );
                    (ok, format!("outcome {got:?}"))
                }
                (None, Some(a)) => check(&link.core, &a),
                (None, None) => continue,
            };
            if ok {
                println!("pass {statement}");
            } else {
                failures += 1;
                println!("FAIL {statement} ({detail})");
            }
        }
    }
    link.core.disconnect();
    let _ = link.flush();
    if failures == 0 {
        0
    } else {
        1
    }
}

fn check(core: &ClientCore, a: &Action) -> (bool, String) {
    match a {
        Action::AssertBuildable { file, value, .. } => {
            let got = core.is_buildable(file);
            (got == Some(*value), format!("got {got:?}"))
        }
        Action::AssertText { file, text, .. } => {
            let got = core.text(file);
            (got.as_deref() == Some(text.as_str()), format!("got {got:?}"))
        }
        // From one client's view, converged means nothing is left unsent.
        Action::AssertConverged { file } => {
            let ok = core.text(file).is_some() && !core.is_dirty(file);
            (ok, format!("dirty={}", core.is_dirty(file)))
        }
        Action::AssertLocked { path, .. } => {
            let Ok(path) = path.parse::<ElementPath>() else { return (false, "bad path".into()) };
            let Some(id) = core.base_table().id_of(&path) else { return (false, "unknown element".into()) };
            let held = core.locks().iter().any(|l| l.elements.contains(&id));
            (held, format!("held={held}"))
        }
        _ => (false, "not an assertion".into()),
    }
}
