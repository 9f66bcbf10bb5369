//! Deterministic multi-client simulation over an in-memory transport.
//!
//! A [`Sim`] owns one [`Server`] and one [`ClientCore`] per scenario client.
//! Every message crosses the loopback as an encoded line, so recorded traces
//! double as protocol golden files. Time is logical: all actions of a tick
//! run in listed order, then the network is pumped to quiescence, then the
//! tick's assertions and expectations are checked.

mod dsl;
mod gen;
mod invariants;

pub use dsl::{parse_scenario, Action, Event, Expect, Scenario, ScenarioSyntaxError};
pub use gen::generate_random_scenario;
pub use invariants::{check_convergence, check_invariants, sequential_replay_oracle, Violation};

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use crate::client::{ClientCore, ClientEvent, Command};
use crate::lockmgr::LockKind;
use crate::protocol::{decode, encode, Conflict, RejectReason};
use crate::server::{Server, ServerError, ServerEvent};
use crate::toylang::{ElementPath, SourceText};

use dsl::quote;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceEvent {
    Corpus { file: String, text: String },
    Wire { tick: u64, from: String, to: String, line: String },
    Applied { tick: u64, client: String, file: String },
    Denied { tick: u64, client: String, holder: String, elements: Vec<String>, reason: String },
    Blocked { tick: u64, client: String, reason: String },
    Reverted { tick: u64, client: String, file: String },
    Granted { tick: u64, holder: String, lock_id: u64, kind: LockKind, elements: Vec<u64> },
    LockDenied { tick: u64, requester: String, holder: String, elements: Vec<u64> },
    Released { tick: u64, holder: String, lock_ids: Vec<u64> },
    Commit { tick: u64, author: String, file: String, version: u64, text: String, elements: Vec<(u64, String)> },
    Reject { tick: u64, author: String, file: String, reason: RejectReason },
    Propagated { tick: u64, client: String, file: String, version: u64 },
    RebaseConflict { tick: u64, client: String, file: String },
    Mode { tick: u64, client: String, on_record: bool },
    Reconciled { tick: u64, client: String, conflicts: Vec<Conflict> },
    Assertion { tick: u64, statement: String, passed: bool, detail: String },
    Final { client: String, on_record: bool, file: String, text: String },
}

fn ids(v: &[u64]) -> String {
    let parts: Vec<String> = v.iter().map(u64::to_string).collect();
    format!("[{}]", parts.join(","))
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use TraceEvent::*;
        match self {
            Corpus { file, text } => write!(f, "corpus {file} {}", quote(text)),
            Wire { tick, from, to, line } => write!(f, "t{tick} wire {from}>{to} {}", line.trim_end_matches('\n')),
            Applied { tick, client, file } => write!(f, "t{tick} applied {client} {file}"),
            Denied { tick, client, holder, elements, reason } => {
                write!(f, "t{tick} denied {client} holder={holder} reason={reason} [{}]", elements.join(","))
            }
            Blocked { tick, client, reason } => write!(f, "t{tick} blocked {client} {reason}"),
            Reverted { tick, client, file } => write!(f, "t{tick} reverted {client} {file}"),
            Granted { tick, holder, lock_id, kind, elements } => {
                write!(f, "t{tick} grant {holder} lock={lock_id} {} {}", kind.as_str(), ids(elements))
            }
            LockDenied { tick, requester, holder, elements } => {
                write!(f, "t{tick} deny {requester} holder={holder} {}", ids(elements))
            }
            Released { tick, holder, lock_ids } => write!(f, "t{tick} release {holder} {}", ids(lock_ids)),
            Commit { tick, author, file, version, text, elements } => {
                let els: Vec<String> = elements.iter().map(|(i, p)| format!("{i}:{p}")).collect();
                write!(f, "t{tick} commit {author} {file} v{version} {} [{}]", quote(text), els.join(","))
            }
            Reject { tick, author, file, reason } => write!(f, "t{tick} reject {author} {file} {reason:?}"),
            Propagated { tick, client, file, version } => write!(f, "t{tick} propagated {client} {file} v{version}"),
            RebaseConflict { tick, client, file } => write!(f, "t{tick} rebase_conflict {client} {file}"),
            Mode { tick, client, on_record } => {
                write!(f, "t{tick} mode {client} {}", if *on_record { "on" } else { "off" })
            }
            Reconciled { tick, client, conflicts } => {
                let cs: Vec<String> =
                    conflicts.iter().map(|c| format!("{}:{}:{:?}", c.file_name, c.element_path, c.kind)).collect();
                write!(f, "t{tick} reconciled {client} [{}]", cs.join(","))
            }
            Assertion { tick, statement, passed, detail } => {
                let verdict = if *passed { "pass" } else { "FAIL" };
                if detail.is_empty() {
                    write!(f, "t{tick} {verdict} {statement}")
                } else {
                    write!(f, "t{tick} {verdict} {statement} ({detail})")
                }
            }
            Final { client, on_record, file, text } => {
                write!(f, "final {client} {} {file} {}", if *on_record { "on" } else { "off" }, quote(text))
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&e.to_string());
            out.push('\n');
        }
        out
    }

    pub fn failures(&self) -> Vec<&TraceEvent> {
        self.events.iter().filter(|e| matches!(e, TraceEvent::Assertion { passed: false, .. })).collect()
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    pub fn count(&self, pred: impl Fn(&TraceEvent) -> bool) -> usize {
        self.events.iter().filter(|e| pred(e)).count()
    }

    /// Encoded protocol lines in transmission order.
    pub fn wire_lines(&self) -> impl Iterator<Item = (&str, &str, &str)> {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::Wire { from, to, line, .. } => Some((from.as_str(), to.as_str(), line.as_str())),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Server(#[from] ServerError),
    #[error("wire encoding failed: {0}")]
    Encode(String),
}

const SERVER: &str = "server";

/// Outcome of an edit command, used for `expect` checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Applied,
    Denied,
    Other,
}

#[derive(Debug, Clone)]
pub struct Sim {
    server: Server,
    clients: Vec<ClientCore>,
    queue: VecDeque<(usize, bool, String)>,
    outcomes: BTreeMap<(usize, u64), Outcome>,
    trace: Trace,
    tick: u64,
}

impl Sim {
    /// Starts a server over `files` and connects every client in order.
    pub fn new(files: &[(String, String)], clients: &[String]) -> Result<Sim, SimError> {
        let sources = files.iter().map(|(n, t)| SourceText::new(n.clone(), t.clone())).collect();
        let server = Server::new(sources)?;
        let mut trace = Trace::default();
        let mut sorted: Vec<&(String, String)> = files.iter().collect();
        sorted.sort();
        for (file, text) in sorted {
            trace.events.push(TraceEvent::Corpus { file: file.clone(), text: text.clone() });
        }
        let mut sim = Sim {
            server,
            clients: clients.iter().map(ClientCore::new).collect(),
            queue: VecDeque::new(),
            outcomes: BTreeMap::new(),
            trace,
            tick: 0,
        };
        for i in 0..sim.clients.len() {
            sim.clients[i].connect();
            sim.collect_client(i)?;
            sim.pump()?;
        }
        Ok(sim)
    }

    pub fn server(&self) -> &Server {
        &self.server
    }

    pub fn clients(&self) -> &[ClientCore] {
        &self.clients
    }

    pub fn client(&self, name: &str) -> Option<&ClientCore> {
        self.clients.iter().find(|c| c.name() == name)
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    fn index(&self, name: &str) -> Option<usize> {
        self.clients.iter().position(|c| c.name() == name)
    }

    /// Moves a client's outbox onto the wire and its events into the trace.
    fn collect_client(&mut self, i: usize) -> Result<(), SimError> {
        let name = self.clients[i].name().to_string();
        for m in self.clients[i].take_outbox() {
            let line = encode(&m).map_err(|e| SimError::Encode(e.to_string()))?;
            self.queue.push_back((i, true, line));
        }
        let tick = self.tick;
        for ev in self.clients[i].take_events() {
            let t = match ev {
                ClientEvent::Applied { cmd, file } => {
                    self.outcomes.insert((i, cmd), Outcome::Applied);
                    TraceEvent::Applied { tick, client: name.clone(), file }
                }
                ClientEvent::Denied { cmd, holder, elements, reason } => {
                    self.outcomes.insert((i, cmd), Outcome::Denied);
                    TraceEvent::Denied { tick, client: name.clone(), holder, elements, reason }
                }
                ClientEvent::Blocked { cmd, reason } => {
                    self.outcomes.insert((i, cmd), Outcome::Other);
                    TraceEvent::Blocked { tick, client: name.clone(), reason }
                }
                ClientEvent::Reverted { file, .. } => TraceEvent::Reverted { tick, client: name.clone(), file },
                ClientEvent::CommitBlocked { holder, elements } => {
                    TraceEvent::Denied { tick, client: name.clone(), holder, elements, reason: "commit_blocked".into() }
                }
                ClientEvent::Propagated { file, version, .. } => {
                    TraceEvent::Propagated { tick, client: name.clone(), file, version }
                }
                ClientEvent::RebaseConflict { file } => TraceEvent::RebaseConflict { tick, client: name.clone(), file },
                ClientEvent::ModeChanged { on_record } => TraceEvent::Mode { tick, client: name.clone(), on_record },
                ClientEvent::Reconciled { conflicts, .. } => {
                    TraceEvent::Reconciled { tick, client: name.clone(), conflicts }
                }
                ClientEvent::Joined { .. }
                | ClientEvent::CommitSent { .. }
                | ClientEvent::Committed { .. }
                | ClientEvent::CommitRejected { .. }
                | ClientEvent::ServerError { .. } => continue,
            };
            self.trace.events.push(t);
        }
        Ok(())
    }

    fn collect_server(&mut self) {
        let tick = self.tick;
        for ev in self.server.drain_events() {
            let t = match ev {
                ServerEvent::Committed { author, file, version, text, elements } => {
                    TraceEvent::Commit { tick, author, file, version, text, elements }
                }
                ServerEvent::Rejected { author, file, reason } => TraceEvent::Reject { tick, author, file, reason },
                ServerEvent::LockGranted { holder, lock_id, kind, elements } => TraceEvent::Granted {
                    tick,
                    holder,
                    lock_id,
                    kind,
                    elements: elements.iter().map(|e| e.0).collect(),
                },
                ServerEvent::LockDenied { requester, holder, elements } => {
                    TraceEvent::LockDenied { tick, requester, holder, elements: elements.iter().map(|e| e.0).collect() }
                }
                ServerEvent::LocksReleased { holder, lock_ids, .. } => TraceEvent::Released { tick, holder, lock_ids },
                ServerEvent::ModeChanged { .. } | ServerEvent::Reconciled { .. } => continue,
            };
            self.trace.events.push(t);
        }
    }

    /// Delivers queued lines one at a time until nothing is in flight.
    fn pump(&mut self) -> Result<(), SimError> {
        while let Some((i, to_server, line)) = self.queue.pop_front() {
            let name = self.clients[i].name().to_string();
            if to_server {
                self.trace.events.push(TraceEvent::Wire {
                    tick: self.tick,
                    from: name,
                    to: SERVER.into(),
                    line: line.clone(),
                });
                let replies = self.server.handle_line(i as u64, line.as_bytes());
                self.collect_server();
                for (conn, m) in replies {
                    let line = encode(&m).map_err(|e| SimError::Encode(e.to_string()))?;
                    self.queue.push_back((conn as usize, false, line));
                }
            } else {
                self.trace.events.push(TraceEvent::Wire {
                    tick: self.tick,
                    from: SERVER.into(),
                    to: name,
                    line: line.clone(),
                });
                match decode(line.as_bytes()) {
                    Ok(m) => self.clients[i].receive(m),
                    Err(e) => {
                        let detail = format!("undecodable server line: {e}");
                        self.trace.events.push(TraceEvent::Assertion {
                            tick: self.tick,
                            statement: "decode".into(),
                            passed: false,
                            detail,
                        });
                    }
                }
                self.collect_client(i)?;
            }
        }
        Ok(())
    }

    /// Runs one tick: actions in order, pump, then checks.
    pub fn run_tick(&mut self, tick: u64, actions: &[Action]) -> Result<(), SimError> {
        self.tick = tick;
        let mut checks: Vec<Check> = Vec::new();
        for a in actions {
            let (client, cmd, expect) = match a {
                Action::Insert { client, file, offset, text, expect } => {
                    (client, Command::Insert { file: file.clone(), offset: *offset, text: text.clone() }, *expect)
                }
                Action::Delete { client, file, offset, len, expect } => {
                    (client, Command::Delete { file: file.clone(), offset: *offset, len: *len }, *expect)
                }
                Action::Revert { client, file } => (client, Command::Revert { file: file.clone() }, None),
                Action::OffRecord { client } => (client, Command::OffRecord, None),
                Action::OnRecord { client } => (client, Command::OnRecord, None),
                _ => {
                    checks.push(Check::Assert(a.clone()));
                    continue;
                }
            };
            let Some(i) = self.index(client) else {
                checks.push(Check::UnknownClient(a.to_string()));
                continue;
            };
            let id = self.clients[i].submit(cmd);
            self.collect_client(i)?;
            if let Some(e) = expect {
                checks.push(Check::Expect(a.to_string(), i, id, e));
            }
        }
        self.pump()?;
        for check in checks {
            let (statement, passed, detail) = match check {
                Check::Expect(statement, i, id, e) => {
                    let got = self.outcomes.get(&(i, id)).copied();
                    let ok = matches!(
                        (e, got),
                        (Expect::Apply, Some(Outcome::Applied)) | (Expect::Deny, Some(Outcome::Denied))
                    );
                    (statement, ok, format!("outcome {got:?}"))
                }
                Check::Assert(a) => {
                    let (ok, detail) = self.check(&a);
                    (a.to_string(), ok, detail)
                }
                Check::UnknownClient(statement) => (statement, false, "unknown client".into()),
            };
            let detail = if passed { String::new() } else { detail };
            self.trace.events.push(TraceEvent::Assertion { tick, statement, passed, detail });
        }
        Ok(())
    }

    fn check(&self, a: &Action) -> (bool, String) {
        let text_of = |client: &str, file: &str| self.client(client).and_then(|c| c.text(file));
        match a {
            Action::AssertBuildable { client, file, value } => {
                let got = self.client(client).and_then(|c| c.is_buildable(file));
                (got == Some(*value), format!("got {got:?}"))
            }
            Action::AssertText { client, file, text } => {
                let got = text_of(client, file);
                (
                    got.as_deref() == Some(text.as_str()),
                    format!("got {}", got.as_deref().map(quote).unwrap_or_default()),
                )
            }
            Action::AssertLocked { path, holder, .. } => {
                let got = path.parse::<ElementPath>().ok().and_then(|p| self.server.lock_holder(&p));
                (got == holder.as_deref(), format!("held by {}", got.unwrap_or("nobody")))
            }
            Action::AssertConverged { file } => {
                let canonical = self.server.file_text(file);
                let stray: Vec<&str> = self
                    .clients
                    .iter()
                    .filter(|c| c.is_on_record() && c.text(file).as_deref() != canonical)
                    .map(ClientCore::name)
                    .collect();
                (canonical.is_some() && stray.is_empty(), format!("diverged: {}", stray.join(",")))
            }
            _ => (false, "not an assertion".into()),
        }
    }

    /// Appends the final buffers and returns the trace.
    pub fn finish(mut self) -> Trace {
        for c in &self.clients {
            for (file, text) in c.texts() {
                self.trace.events.push(TraceEvent::Final {
                    client: c.name().to_string(),
                    on_record: c.is_on_record(),
                    file,
                    text,
                });
            }
        }
        self.trace
    }
}

#[derive(Debug)]
enum Check {
    Expect(String, usize, u64, Expect),
    Assert(Action),
    UnknownClient(String),
}

/// Executes a scenario. The seed is accepted for interface stability;
/// scheduling never depends on it.
pub fn run(scenario: &Scenario, _seed: u64) -> Result<Trace, SimError> {
    let mut sim = Sim::new(&scenario.files, &scenario.clients)?;
    let mut i = 0;
    while i < scenario.events.len() {
        let tick = scenario.events[i].tick;
        let j = scenario.events[i..].iter().position(|e| e.tick != tick).map_or(scenario.events.len(), |k| i + k);
        let actions: Vec<Action> = scenario.events[i..j].iter().map(|e| e.action.clone()).collect();
        sim.run_tick(tick, &actions)?;
        i = j;
    }
    Ok(sim.finish())
}

#[cfg(test)]
mod tests;
