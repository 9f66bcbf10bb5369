//! The central relay: owns the canonical project, serializes every message
//! through [`Server::handle`], gates commits on buildability and locks, and
//! broadcasts buildable snapshots.
//!
//! `handle` is a deterministic state-machine step. Transports feed it one
//! message at a time from a single ordered queue.

mod reconcile;

pub use reconcile::reconcile;

use std::collections::{BTreeMap, BTreeSet};

use crate::lockmgr::{compute_lock_unit, EditClass, LockKind, LockOutcome, LockTable, ReleaseCause};
use crate::protocol::{
    self, Body, Commit, CommitAck, CommitReject, Conflict, DiagnosticInfo, EditIntent, ElementInfo, ErrorBody,
    FileSnapshot, LockDeny, LockGrant, Message, Propagate, ReconcileReport, RejectReason, UnlockNotice, Welcome,
    WireEditClass,
};
use crate::semantics::{
    assign_element_ids, build_reference_graph, must_serialize, required_locks, ElementId, ElementTable, IdAllocator,
    LockNeed, Pins, ReferenceGraph,
};
use crate::toylang::{analyze, Diagnostic, ElementPath, SourceText};

pub type ConnId = u64;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ServerError {
    #[error("initial corpus is not buildable ({} diagnostics)", .0.len())]
    Unbuildable(Vec<(String, Diagnostic)>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordMode {
    On,
    Off,
}

/// Observable server-side happenings, in processing order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServerEvent {
    Committed { author: String, file: String, version: u64, text: String, elements: Vec<(u64, String)> },
    Rejected { author: String, file: String, reason: RejectReason },
    LockGranted { holder: String, lock_id: u64, kind: LockKind, elements: Vec<ElementId> },
    LockDenied { requester: String, holder: String, elements: Vec<ElementId> },
    LocksReleased { holder: String, lock_ids: Vec<u64>, cause: ReleaseCause },
    ModeChanged { name: String, mode: RecordMode },
    Reconciled { name: String, conflicts: Vec<Conflict> },
}

#[derive(Debug, Clone)]
struct AuthFile {
    version: u64,
    text: String,
}

#[derive(Debug, Clone)]
struct OffBase {
    texts: BTreeMap<String, String>,
    versions: BTreeMap<String, u64>,
    table: ElementTable,
}

#[derive(Debug, Clone)]
struct Session {
    name: String,
    mode: RecordMode,
    off_base: Option<OffBase>,
    staged: Vec<Commit>,
}

#[derive(Debug, Clone, Default)]
struct Conn {
    last_seq: u64,
    out_seq: u64,
    session: Option<String>,
}

#[derive(Debug, Clone, Copy)]
struct Provisional {
    holder_parent: Option<ElementId>,
}

#[derive(Debug, Clone)]
pub struct Server {
    files: BTreeMap<String, AuthFile>,
    table: ElementTable,
    graph: ReferenceGraph,
    alloc: IdAllocator,
    locks: LockTable,
    /// Ids reserved for members not yet committed, keyed by holder.
    provisional: BTreeMap<ElementId, (String, Provisional)>,
    conns: BTreeMap<ConnId, Conn>,
    sessions: BTreeMap<String, Session>,
    session_conn: BTreeMap<String, ConnId>,
    next_session: u64,
    events: Vec<ServerEvent>,
}

type Out = Vec<(String, Body)>;

impl Server {
    pub fn new(files: Vec<SourceText>) -> Result<Server, ServerError> {
        let analysis = analyze(&files);
        if !analysis.is_buildable() {
            let diags = analysis
                .diagnostics
                .into_iter()
                .flat_map(|(f, ds)| ds.into_iter().map(move |d| (f.clone(), d)))
                .collect();
            return Err(ServerError::Unbuildable(diags));
        }
        let mut alloc = IdAllocator::default();
        let table = ElementTable::initial(&analysis.asts, &mut alloc);
        let graph = build_reference_graph(&table, &analysis.bindings);
        Ok(Server {
            files: files.into_iter().map(|f| (f.file_name, AuthFile { version: 0, text: f.content })).collect(),
            table,
            graph,
            alloc,
            locks: LockTable::default(),
            provisional: BTreeMap::new(),
            conns: BTreeMap::new(),
            sessions: BTreeMap::new(),
            session_conn: BTreeMap::new(),
            next_session: 1,
            events: Vec::new(),
        })
    }

    pub fn file_names(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(String::as_str)
    }

    pub fn file_text(&self, file: &str) -> Option<&str> {
        self.files.get(file).map(|f| f.text.as_str())
    }

    pub fn file_version(&self, file: &str) -> Option<u64> {
        self.files.get(file).map(|f| f.version)
    }

    pub fn texts(&self) -> BTreeMap<String, String> {
        self.files.iter().map(|(k, f)| (k.clone(), f.text.clone())).collect()
    }

    pub fn table(&self) -> &ElementTable {
        &self.table
    }

    pub fn graph(&self) -> &ReferenceGraph {
        &self.graph
    }

    pub fn locks(&self) -> &LockTable {
        &self.locks
    }

    pub fn session_name(&self, session: &str) -> Option<&str> {
        self.sessions.get(session).map(|s| s.name.as_str())
    }

    pub fn record_mode(&self, name: &str) -> Option<RecordMode> {
        self.sessions.values().find(|s| s.name == name).map(|s| s.mode)
    }

    /// Name of the session holding a lock on the element at `path`.
    pub fn lock_holder(&self, path: &ElementPath) -> Option<&str> {
        let id = self.table.id_of(path)?;
        let (holder, _, _) = self.locks.query(id)?;
        self.session_name(holder)
    }

    pub fn drain_events(&mut self) -> Vec<ServerEvent> {
        std::mem::take(&mut self.events)
    }

    /// Decodes and handles one line; undecodable input gets an error reply.
    pub fn handle_line(&mut self, conn: ConnId, line: &[u8]) -> Vec<(ConnId, Message)> {
        match protocol::decode(line) {
            Ok(msg) => self.handle(conn, msg),
            Err(e) => {
                self.conns.entry(conn).or_default();
                let out = vec![(String::new(), error_body("bad_frame", e.to_string()))];
                self.address(Some(conn), out)
            }
        }
    }

    pub fn handle(&mut self, conn: ConnId, msg: Message) -> Vec<(ConnId, Message)> {
        let state = self.conns.entry(conn).or_default();
        if msg.seq <= state.last_seq {
            let err = error_body("bad_seq", format!("seq {} does not follow {}", msg.seq, state.last_seq));
            return self.address(Some(conn), vec![(String::new(), err)]);
        }
        state.last_seq = msg.seq;
        let session = state.session.clone();
        let out = match (session, msg.body) {
            (None, Body::Hello(h)) => self.on_hello(conn, h.name),
            (Some(_), Body::Hello(_)) => {
                vec![(String::new(), error_body("already_joined", "session already established"))]
            }
            (None, _) => vec![(String::new(), error_body("no_session", "send hello first"))],
            (Some(sid), _) if msg.session != sid => {
                vec![(sid.clone(), error_body("bad_session", format!("expected session {sid:?}")))]
            }
            (Some(sid), body) => self.dispatch(&sid, body),
        };
        self.address(Some(conn), out)
    }

    /// Drops a connection, releasing whatever its session held.
    pub fn disconnect(&mut self, conn: ConnId) -> Vec<(ConnId, Message)> {
        let Some(state) = self.conns.remove(&conn) else { return Vec::new() };
        let Some(sid) = state.session else { return Vec::new() };
        let out = self.release_session_locks(&sid, ReleaseCause::Disconnected);
        self.sessions.remove(&sid);
        self.session_conn.remove(&sid);
        self.address(None, out)
    }

    /// Turns (recipient session, body) pairs into addressed messages. An
    /// empty recipient means the connection that sent the request.
    fn address(&mut self, origin: Option<ConnId>, out: Out) -> Vec<(ConnId, Message)> {
        out.into_iter()
            .filter_map(|(sid, body)| {
                let conn = if sid.is_empty() { origin? } else { *self.session_conn.get(&sid)? };
                let state = self.conns.get_mut(&conn)?;
                state.out_seq += 1;
                let session = state.session.clone().unwrap_or_default();
                Some((conn, Message::new(state.out_seq, session, body)))
            })
            .collect()
    }

    fn dispatch(&mut self, sid: &str, body: Body) -> Out {
        match body {
            Body::EditIntent(i) => self.on_edit_intent(sid, i),
            Body::Commit(c) => self.on_commit(sid, c),
            Body::OffRecord => self.on_off_record(sid),
            Body::OnRecord(o) => {
                let local = o.files.into_iter().map(|f| (f.file_name, f.text)).collect();
                self.on_on_record(sid, local)
            }
            Body::Bye => {
                let out = self.release_session_locks(sid, ReleaseCause::Disconnected);
                self.sessions.remove(sid);
                if let Some(conn) = self.session_conn.remove(sid) {
                    if let Some(c) = self.conns.get_mut(&conn) {
                        c.session = None;
                    }
                }
                out
            }
            other => vec![(
                sid.to_string(),
                error_body("unexpected", format!("{} is not a client message", other.type_name())),
            )],
        }
    }

    fn on_hello(&mut self, conn: ConnId, name: String) -> Out {
        if name.is_empty() || self.sessions.values().any(|s| s.name == name) {
            return vec![(String::new(), error_body("name_taken", format!("name {name:?} is unavailable")))];
        }
        let sid = format!("s{}", self.next_session);
        self.next_session += 1;
        self.sessions.insert(sid.clone(), Session { name, mode: RecordMode::On, off_base: None, staged: Vec::new() });
        self.session_conn.insert(sid.clone(), conn);
        self.conns.entry(conn).or_default().session = Some(sid.clone());
        vec![(sid.clone(), Body::Welcome(self.welcome(&sid)))]
    }

    fn welcome(&self, sid: &str) -> Welcome {
        let files = self
            .files
            .iter()
            .map(|(name, f)| FileSnapshot {
                file_name: name.clone(),
                version: f.version,
                text: f.text.clone(),
                elements: self.element_infos(name),
            })
            .collect();
        Welcome { session: sid.to_string(), files }
    }

    fn element_infos(&self, file: &str) -> Vec<ElementInfo> {
        self.table
            .file_entries(file)
            .into_iter()
            .map(|e| ElementInfo { id: e.id.0, path: e.path.to_string(), span: [e.span.start, e.span.end] })
            .collect()
    }

    fn path_of(&self, id: ElementId, fallback: Option<&ElementTable>) -> String {
        if let Some(e) = self.table.get(id).or_else(|| fallback.and_then(|t| t.get(id))) {
            return e.path.to_string();
        }
        match self.provisional.get(&id).and_then(|(_, p)| p.holder_parent) {
            Some(parent) => format!("{}/+{}", self.path_of(parent, fallback), id.0),
            None => format!("+{}", id.0),
        }
    }

    fn on_record_others(&self, sid: &str) -> Vec<String> {
        self.sessions
            .iter()
            .filter(|(id, s)| id.as_str() != sid && s.mode == RecordMode::On)
            .map(|(id, _)| id.clone())
            .collect()
    }

    fn is_on_record(&self, sid: &str) -> bool {
        self.sessions.get(sid).is_some_and(|s| s.mode == RecordMode::On)
    }

    fn name(&self, sid: &str) -> String {
        self.session_name(sid).unwrap_or_default().to_string()
    }

    fn deny(&self, sid: &str, reason: &str) -> Out {
        vec![(
            sid.to_string(),
            Body::LockDeny(LockDeny { holder_name: String::new(), elements: Vec::new(), reason: reason.into() }),
        )]
    }

    fn on_edit_intent(&mut self, sid: &str, intent: EditIntent) -> Out {
        if !self.is_on_record(sid) {
            return self.deny(sid, "off_record");
        }
        if intent.edit_class == WireEditClass::Release {
            let Some(lock_id) = intent.release_lock_id else {
                return vec![(sid.to_string(), error_body("schema", "release needs release_lock_id"))];
            };
            let freed = self.locks.release(sid, lock_id);
            if freed.is_empty() {
                return Vec::new();
            }
            return self.announce_release(sid, vec![lock_id], freed, ReleaseCause::Reverted, None);
        }
        let Some(file) = self.files.get(&intent.file_name) else {
            return self.deny(sid, "unknown_file");
        };
        if file.version != intent.base_version {
            return self.deny(sid, "stale");
        }
        let version = file.version;
        let lookup = |p: &str| p.parse::<ElementPath>().ok().and_then(|p| self.table.id_of(&p));
        let (target, edit_class) = match intent.edit_class {
            WireEditClass::Header | WireEditClass::Body => {
                let Some(t) = lookup(&intent.target_path) else { return self.deny(sid, "unknown_element") };
                (t, if intent.edit_class == WireEditClass::Header { EditClass::Header } else { EditClass::Body })
            }
            WireEditClass::NewReference => {
                let Some(r) = intent.referent_path.as_deref().and_then(lookup) else {
                    return self.deny(sid, "unknown_element");
                };
                (r, EditClass::NewReference(r))
            }
            WireEditClass::NewMember => {
                let parent = if intent.target_path.is_empty() {
                    None
                } else {
                    match lookup(&intent.target_path) {
                        Some(p) if self.table.get(p).is_some_and(|e| e.parent.is_none()) => Some(p),
                        _ => return self.deny(sid, "unknown_element"),
                    }
                };
                let id = self.alloc.fresh();
                self.provisional.insert(id, (sid.to_string(), Provisional { holder_parent: parent }));
                (id, EditClass::NewMember)
            }
            WireEditClass::Release => unreachable!("handled above"),
        };
        let unit = match compute_lock_unit(target, edit_class, &self.graph) {
            Ok(u) => u,
            Err(_) => return self.deny(sid, "unknown_element"),
        };
        let (table, graph) = (&self.table, &self.graph);
        let related = |a: ElementId, b: ElementId| must_serialize(a, b, table, graph).unwrap_or(a == b);
        match self.locks.request(sid, unit, version, &related) {
            LockOutcome::Grant(rec) => {
                self.events.push(ServerEvent::LockGranted {
                    holder: self.name(sid),
                    lock_id: rec.lock_id,
                    kind: rec.unit.kind,
                    elements: rec.unit.elements.iter().copied().collect(),
                });
                let mut elements = vec![self.path_of(target, None)];
                elements.extend(rec.unit.elements.iter().filter(|e| **e != target).map(|e| self.path_of(*e, None)));
                vec![(
                    sid.to_string(),
                    Body::LockGrant(LockGrant { lock_id: rec.lock_id, elements, kind: rec.unit.kind }),
                )]
            }
            LockOutcome::Deny { holder, elements } => {
                if edit_class == EditClass::NewMember {
                    self.provisional.remove(&target);
                }
                self.events.push(ServerEvent::LockDenied {
                    requester: self.name(sid),
                    holder: self.name(&holder),
                    elements: elements.iter().copied().collect(),
                });
                let body = LockDeny {
                    holder_name: self.name(&holder),
                    elements: elements.iter().map(|e| self.path_of(*e, None)).collect(),
                    reason: "locked".into(),
                };
                vec![(sid.to_string(), Body::LockDeny(body))]
            }
        }
    }

    fn announce_release(
        &mut self,
        sid: &str,
        lock_ids: Vec<u64>,
        freed: Vec<ElementId>,
        cause: ReleaseCause,
        old_table: Option<&ElementTable>,
    ) -> Out {
        let paths: Vec<String> = freed.iter().map(|e| self.path_of(*e, old_table)).collect();
        for e in &freed {
            if self.provisional.get(e).is_some_and(|(h, _)| h == sid) {
                self.provisional.remove(e);
            }
        }
        self.events.push(ServerEvent::LocksReleased { holder: self.name(sid), lock_ids, cause });
        let notice = UnlockNotice { elements: paths, holder_name: self.name(sid) };
        self.on_record_others(sid).into_iter().map(|o| (o, Body::UnlockNotice(notice.clone()))).collect()
    }

    fn release_session_locks(&mut self, sid: &str, cause: ReleaseCause) -> Out {
        let lock_ids: Vec<u64> = self.locks.held_by(sid).map(|r| r.lock_id).collect();
        let freed = self.locks.release_all(sid, cause);
        self.provisional.retain(|_, (h, _)| h != sid);
        if lock_ids.is_empty() {
            return Vec::new();
        }
        self.announce_release(sid, lock_ids, freed, cause, None)
    }

    fn on_commit(&mut self, sid: &str, commit: Commit) -> Out {
        if !self.is_on_record(sid) {
            return vec![(sid.to_string(), error_body("off_record", "commits are not accepted off the record"))];
        }
        let session = self.sessions.get_mut(sid).expect("live session");
        let more = commit.more;
        session.staged.push(commit);
        if more {
            return Vec::new();
        }
        let batch = std::mem::take(&mut session.staged);
        self.try_commit(sid, batch)
    }

    fn reject_all(
        &mut self,
        sid: &str,
        batch: &[Commit],
        reason: RejectReason,
        diagnostics: Option<Vec<DiagnosticInfo>>,
    ) -> Out {
        batch
            .iter()
            .map(|c| {
                self.events.push(ServerEvent::Rejected { author: self.name(sid), file: c.file_name.clone(), reason });
                let body = CommitReject { file_name: c.file_name.clone(), reason, diagnostics: diagnostics.clone() };
                (sid.to_string(), Body::CommitReject(body))
            })
            .collect()
    }

    /// Applies a batch of whole-file commits atomically.
    pub fn try_commit(&mut self, sid: &str, batch: Vec<Commit>) -> Out {
        let mut names = BTreeSet::new();
        for c in &batch {
            let fresh = self.files.get(&c.file_name).is_some_and(|f| f.version == c.base_version);
            if !fresh || !names.insert(c.file_name.clone()) {
                return self.reject_all(sid, &batch, RejectReason::Stale, None);
            }
        }

        let old_texts = self.texts();
        let mut new_texts = old_texts.clone();
        for c in &batch {
            new_texts.insert(c.file_name.clone(), c.text.clone());
        }
        let sources: Vec<SourceText> = new_texts.iter().map(|(n, t)| SourceText::new(n.clone(), t.clone())).collect();
        let analysis = analyze(&sources);
        if !analysis.is_buildable() {
            let diags = analysis
                .diagnostics
                .iter()
                .flat_map(|(f, ds)| {
                    ds.iter().map(move |d| DiagnosticInfo {
                        file_name: f.clone(),
                        span: [d.span.start, d.span.end],
                        code: d.code.as_str().into(),
                        message: d.message.clone(),
                    })
                })
                .collect();
            return self.reject_all(sid, &batch, RejectReason::Unbuildable, Some(diags));
        }

        let held: Vec<_> = self.locks.held_by(sid).cloned().collect();
        let renamable: BTreeSet<ElementId> = held
            .iter()
            .filter(|r| r.unit.kind == LockKind::Defining)
            .flat_map(|r| r.unit.elements.iter().copied())
            .collect();
        let any_lock: BTreeSet<ElementId> = held.iter().flat_map(|r| r.unit.elements.iter().copied()).collect();
        let own_provisional: Vec<(ElementId, Option<ElementId>)> = self
            .provisional
            .iter()
            .filter(|(id, (h, _))| h == sid && any_lock.contains(id))
            .map(|(id, (_, p))| (*id, p.holder_parent))
            .collect();
        let needs = required_locks(
            &old_texts,
            &self.table,
            &self.graph,
            &new_texts,
            &analysis.asts,
            &analysis.bindings,
            &renamable,
        );
        let covered = |n: &LockNeed| match n {
            LockNeed::Defining(e) => renamable.contains(e),
            LockNeed::Touch(e) | LockNeed::Reference(e) => any_lock.contains(e),
            LockNeed::NewUnder(p) => own_provisional.iter().any(|(_, q)| q == p),
        };
        let violation = match &needs {
            Ok(needs) => needs.iter().any(|n| !covered(n)),
            Err(_) => true,
        };
        if violation {
            return self.reject_all(sid, &batch, RejectReason::LockViolation, None);
        }
        let pins = Pins { renamable, provisional: own_provisional };
        let Ok(table) = assign_element_ids(&self.table, &analysis.asts, &pins, &mut self.alloc) else {
            return self.reject_all(sid, &batch, RejectReason::LockViolation, None);
        };

        let old_table = std::mem::replace(&mut self.table, table);
        self.graph = build_reference_graph(&self.table, &analysis.bindings);
        let author = self.name(sid);
        let mut out = Vec::new();
        let mut propagates = Vec::new();
        for c in &batch {
            let f = self.files.get_mut(&c.file_name).expect("checked above");
            f.version += 1;
            f.text = c.text.clone();
            let version = f.version;
            self.table.generation.insert(c.file_name.clone(), version);
            let elements = self.element_infos(&c.file_name);
            self.events.push(ServerEvent::Committed {
                author: author.clone(),
                file: c.file_name.clone(),
                version,
                text: c.text.clone(),
                elements: elements.iter().map(|e| (e.id, e.path.clone())).collect(),
            });
            out.push((
                sid.to_string(),
                Body::CommitAck(CommitAck { file_name: c.file_name.clone(), version, elements: elements.clone() }),
            ));
            propagates.push(Propagate {
                file_name: c.file_name.clone(),
                version,
                text: c.text.clone(),
                author: author.clone(),
                elements,
            });
        }
        let others = self.on_record_others(sid);
        for o in &others {
            out.extend(propagates.iter().map(|p| (o.clone(), Body::Propagate(p.clone()))));
        }
        let lock_ids: Vec<u64> = held.iter().map(|r| r.lock_id).collect();
        let freed = self.locks.release_all(sid, ReleaseCause::Committed);
        if !lock_ids.is_empty() {
            out.extend(self.announce_release(sid, lock_ids, freed, ReleaseCause::Committed, Some(&old_table)));
        }
        self.provisional.retain(|_, (h, _)| h != sid);
        out
    }

    fn on_off_record(&mut self, sid: &str) -> Out {
        if !self.is_on_record(sid) {
            return vec![(sid.to_string(), error_body("mode", "already off the record"))];
        }
        let out = self.release_session_locks(sid, ReleaseCause::WentOffRecord);
        let base = OffBase {
            texts: self.texts(),
            versions: self.files.iter().map(|(k, f)| (k.clone(), f.version)).collect(),
            table: self.table.clone(),
        };
        let s = self.sessions.get_mut(sid).expect("live session");
        s.mode = RecordMode::Off;
        s.off_base = Some(base);
        s.staged.clear();
        self.events.push(ServerEvent::ModeChanged { name: self.name(sid), mode: RecordMode::Off });
        out
    }

    /// Brings an off-record session back: compares its local texts with
    /// what happened upstream, then resets it to the canonical snapshot.
    pub fn on_on_record(&mut self, sid: &str, local: BTreeMap<String, String>) -> Out {
        let Some(s) = self.sessions.get_mut(sid).filter(|s| s.mode == RecordMode::Off) else {
            return vec![(sid.to_string(), error_body("mode", "not off the record"))];
        };
        let base = s.off_base.take().expect("off-record sessions keep a base");
        s.mode = RecordMode::On;
        let conflicts = reconcile(&base.texts, &base.table, &self.texts(), &self.table, &local);
        let name = self.name(sid);
        self.events.push(ServerEvent::ModeChanged { name: name.clone(), mode: RecordMode::On });
        self.events.push(ServerEvent::Reconciled { name, conflicts: conflicts.clone() });
        let report = ReconcileReport { conflicts, base_version_map: base.versions };
        vec![(sid.to_string(), Body::ReconcileReport(report)), (sid.to_string(), Body::Welcome(self.welcome(sid)))]
    }
}

fn error_body(code: &str, message: impl Into<String>) -> Body {
    Body::Error(ErrorBody { code: code.into(), message: message.into() })
}
