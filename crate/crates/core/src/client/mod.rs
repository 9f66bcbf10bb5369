//! Client core: local buffers, continuous buildability checks, lock intents
//! before edits, automatic commits on buildable transitions, rebasing under
//! incoming snapshots, and record mode.
//!
//! [`ClientCore`] is a single-threaded state machine. Callers feed it local
//! commands with [`ClientCore::submit`] and server messages with
//! [`ClientCore::receive`], then drain [`ClientCore::take_outbox`] and
//! [`ClientCore::take_events`].

mod pending;

pub use pending::{Hunk, Pending};

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::lockmgr::LockKind;
use crate::protocol::{
    Body, Commit, Conflict, EditIntent, ElementInfo, FileSnapshot, Hello, LocalFile, LockDeny, LockGrant, Message,
    OnRecord, ReconcileReport, RejectReason, WireEditClass,
};
use crate::semantics::{
    build_reference_graph, required_locks, ElementId, ElementKind, ElementTable, LockNeed, ReferenceGraph,
};
use crate::toylang::{analyze, BindingTable, ElementPath, ProjectAnalysis, SourceText, Span};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Insert { file: String, offset: usize, text: String },
    Delete { file: String, offset: usize, len: usize },
    Revert { file: String },
    OffRecord,
    OnRecord,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClientEvent {
    Joined {
        session: String,
    },
    Applied {
        cmd: u64,
        file: String,
    },
    Denied {
        cmd: u64,
        holder: String,
        elements: Vec<String>,
        reason: String,
    },
    Blocked {
        cmd: u64,
        reason: String,
    },
    Reverted {
        cmd: u64,
        file: String,
    },
    CommitSent {
        files: Vec<String>,
    },
    Committed {
        file: String,
        version: u64,
    },
    CommitRejected {
        file: String,
        reason: RejectReason,
    },
    /// Locks needed by the pending work could not be obtained at commit
    /// time; the dirty files were reverted.
    CommitBlocked {
        holder: String,
        elements: Vec<String>,
    },
    Propagated {
        file: String,
        version: u64,
        author: String,
    },
    RebaseConflict {
        file: String,
    },
    ModeChanged {
        on_record: bool,
    },
    Reconciled {
        conflicts: Vec<Conflict>,
        local_texts: BTreeMap<String, String>,
    },
    ServerError {
        code: String,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mode {
    Joining,
    On,
    Off,
    Reconciling { local_texts: BTreeMap<String, String>, report: Option<ReconcileReport> },
}

#[derive(Debug, Clone)]
struct FileState {
    base_text: String,
    base_version: u64,
    elements: Vec<ElementInfo>,
    pending: Pending,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeldLock {
    pub lock_id: u64,
    pub kind: LockKind,
    pub elements: BTreeSet<ElementId>,
    /// Provisional ids and the parent each was reserved under.
    pub provisional: Vec<(ElementId, Option<ElementId>)>,
    /// Files whose pending edits needed this lock.
    pub origins: BTreeSet<String>,
}

#[derive(Debug, Clone)]
struct Edit {
    file: String,
    start: usize,
    end: usize,
    text: String,
}

#[derive(Debug, Clone)]
enum Purpose {
    Edit { cmd: u64, edit: Edit, defining: BTreeSet<ElementId> },
    Audit { defining: BTreeSet<ElementId> },
}

#[derive(Debug, Clone)]
enum Op {
    Idle,
    Locking { purpose: Purpose, awaiting: usize, denied: Option<LockDeny>, prior: BTreeSet<u64>, invalidated: bool },
    Committing { remaining: BTreeSet<String>, rejected: Vec<(String, RejectReason)>, propagated: bool },
}

#[derive(Debug, Clone, Default)]
struct BaseProject {
    analysis: ProjectAnalysis,
    table: ElementTable,
    graph: ReferenceGraph,
}

#[derive(Debug, Clone)]
pub struct ClientCore {
    name: String,
    session: String,
    out_seq: u64,
    mode: Mode,
    files: BTreeMap<String, FileState>,
    base: BaseProject,
    local: ProjectAnalysis,
    locks: Vec<HeldLock>,
    /// Elements whose defining lock this client asked for itself.
    defining_targets: BTreeSet<ElementId>,
    op: Op,
    queue: VecDeque<(u64, Command)>,
    next_cmd: u64,
    retry_left: u8,
    commit_suppressed: bool,
    outbox: Vec<Message>,
    events: Vec<ClientEvent>,
}

impl ClientCore {
    pub fn new(name: impl Into<String>) -> Self {
        ClientCore {
            name: name.into(),
            session: String::new(),
            out_seq: 0,
            mode: Mode::Joining,
            files: BTreeMap::new(),
            base: BaseProject::default(),
            local: ProjectAnalysis::default(),
            locks: Vec::new(),
            defining_targets: BTreeSet::new(),
            op: Op::Idle,
            queue: VecDeque::new(),
            next_cmd: 1,
            retry_left: 1,
            commit_suppressed: false,
            outbox: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn session(&self) -> &str {
        &self.session
    }

    pub fn mode(&self) -> &Mode {
        &self.mode
    }

    pub fn is_on_record(&self) -> bool {
        self.mode == Mode::On
    }

    /// No operation in flight and nothing queued.
    pub fn is_idle(&self) -> bool {
        matches!(self.op, Op::Idle) && self.queue.is_empty()
    }

    pub fn file_names(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(String::as_str)
    }

    pub fn text(&self, file: &str) -> Option<String> {
        self.files.get(file).map(|f| f.pending.render(&f.base_text))
    }

    pub fn texts(&self) -> BTreeMap<String, String> {
        self.files.iter().map(|(k, f)| (k.clone(), f.pending.render(&f.base_text))).collect()
    }

    pub fn base_text(&self, file: &str) -> Option<&str> {
        self.files.get(file).map(|f| f.base_text.as_str())
    }

    pub fn base_version(&self, file: &str) -> Option<u64> {
        self.files.get(file).map(|f| f.base_version)
    }

    pub fn is_dirty(&self, file: &str) -> bool {
        self.files.get(file).is_some_and(|f| !f.pending.is_empty())
    }

    pub fn dirty_files(&self) -> Vec<String> {
        self.files.iter().filter(|(_, f)| !f.pending.is_empty()).map(|(k, _)| k.clone()).collect()
    }

    pub fn pending(&self, file: &str) -> Option<&Pending> {
        self.files.get(file).map(|f| &f.pending)
    }

    /// Buildability of a file within the local (unsaved) project.
    pub fn is_buildable(&self, file: &str) -> Option<bool> {
        self.files.contains_key(file).then(|| self.local.file_buildable(file))
    }

    pub fn project_buildable(&self) -> bool {
        self.local.is_buildable()
    }

    pub fn locks(&self) -> &[HeldLock] {
        &self.locks
    }

    /// Element table of the last propagated or acknowledged state.
    pub fn base_table(&self) -> &ElementTable {
        &self.base.table
    }

    pub fn base_graph(&self) -> &ReferenceGraph {
        &self.base.graph
    }

    pub fn base_bindings(&self) -> &BindingTable {
        &self.base.analysis.bindings
    }

    /// Span of a base element in the current buffer.
    pub fn live_span(&self, id: ElementId) -> Option<Span> {
        let e = self.base.table.get(id)?;
        Some(self.files.get(&e.file)?.pending.map_span(e.span))
    }

    pub fn take_outbox(&mut self) -> Vec<Message> {
        std::mem::take(&mut self.outbox)
    }

    pub fn take_events(&mut self) -> Vec<ClientEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn connect(&mut self) {
        self.send(Body::Hello(Hello { name: self.name.clone() }));
    }

    pub fn disconnect(&mut self) {
        self.send(Body::Bye);
    }

    fn send(&mut self, body: Body) {
        self.out_seq += 1;
        self.outbox.push(Message::new(self.out_seq, self.session.clone(), body));
    }

    pub fn submit(&mut self, cmd: Command) -> u64 {
        let id = self.next_cmd;
        self.next_cmd += 1;
        self.queue.push_back((id, cmd));
        self.pump();
        id
    }

    pub fn receive(&mut self, msg: Message) {
        match msg.body {
            Body::Welcome(w) => self.on_welcome(w.session, w.files),
            Body::LockGrant(g) => self.on_lock_reply(Ok(g)),
            Body::LockDeny(d) => self.on_lock_reply(Err(d)),
            Body::CommitAck(a) => self.on_commit_reply(a.file_name, Ok((a.version, a.elements))),
            Body::CommitReject(r) => self.on_commit_reply(r.file_name, Err(r.reason)),
            Body::Propagate(p) => self.on_propagate(p.file_name, p.version, p.text, p.author, p.elements),
            Body::ReconcileReport(r) => {
                if let Mode::Reconciling { report, .. } = &mut self.mode {
                    *report = Some(r);
                }
            }
            Body::UnlockNotice(_) => self.commit_suppressed = false,
            Body::Error(e) => self.events.push(ClientEvent::ServerError { code: e.code, message: e.message }),
            _ => {}
        }
        self.pump();
    }

    fn pump(&mut self) {
        while matches!(self.op, Op::Idle) {
            let Some((id, cmd)) = self.queue.pop_front() else { break };
            self.run_command(id, cmd);
        }
        if self.is_idle() {
            self.maybe_commit();
        }
    }

    fn run_command(&mut self, id: u64, cmd: Command) {
        match cmd {
            Command::Insert { file, offset, text } => self.edit(id, file, offset, offset, text),
            Command::Delete { file, offset, len } => self.edit(id, file, offset, offset + len, String::new()),
            Command::Revert { file } => {
                if self.revert(&file) {
                    self.events.push(ClientEvent::Reverted { cmd: id, file });
                } else {
                    self.events.push(ClientEvent::Blocked { cmd: id, reason: "unknown_file".into() });
                }
            }
            Command::OffRecord => {
                if self.mode != Mode::On {
                    self.events.push(ClientEvent::Blocked { cmd: id, reason: "not_on_record".into() });
                    return;
                }
                self.send(Body::OffRecord);
                self.mode = Mode::Off;
                self.locks.clear();
                self.defining_targets.clear();
                self.events.push(ClientEvent::ModeChanged { on_record: false });
            }
            Command::OnRecord => {
                if self.mode != Mode::Off {
                    self.events.push(ClientEvent::Blocked { cmd: id, reason: "not_off_record".into() });
                    return;
                }
                let local_texts = self.texts();
                let files =
                    local_texts.iter().map(|(k, t)| LocalFile { file_name: k.clone(), text: t.clone() }).collect();
                self.send(Body::OnRecord(OnRecord { files }));
                self.mode = Mode::Reconciling { local_texts, report: None };
            }
        }
    }

    fn edit(&mut self, cmd: u64, file: String, start: usize, end: usize, text: String) {
        match self.mode {
            Mode::Reconciling { .. } => {
                self.events.push(ClientEvent::Blocked { cmd, reason: "off_record_pending_reconcile".into() });
                return;
            }
            Mode::Joining => {
                self.events.push(ClientEvent::Blocked { cmd, reason: "not_connected".into() });
                return;
            }
            _ => {}
        }
        let Some(current) = self.text(&file) else {
            self.events.push(ClientEvent::Blocked { cmd, reason: "unknown_file".into() });
            return;
        };
        if start > end || end > current.len() || !current.is_char_boundary(start) || !current.is_char_boundary(end) {
            self.events.push(ClientEvent::Blocked { cmd, reason: "bad_offset".into() });
            return;
        }
        let edit = Edit { file, start, end, text };
        if self.mode == Mode::Off {
            self.apply(cmd, edit);
            return;
        }
        let span_needs = self.span_needs(&edit);
        let defining: BTreeSet<ElementId> = span_needs
            .iter()
            .filter_map(|n| if let LockNeed::Defining(e) = n { Some(*e) } else { None })
            .chain(self.defining_targets.iter().copied())
            .collect();
        let mut tentative = self.texts();
        let mut t = current;
        t.replace_range(edit.start..edit.end, &edit.text);
        tentative.insert(edit.file.clone(), t);
        let mut needs = span_needs;
        needs.extend(self.diff_needs(&tentative, &defining));
        let missing = self.missing(&needs, &defining);
        if missing.is_empty() {
            self.defining_targets.extend(defining);
            self.apply(cmd, edit);
        } else {
            self.request(missing, &edit.file, Purpose::Edit { cmd, edit: edit.clone(), defining });
        }
    }

    fn apply(&mut self, cmd: u64, edit: Edit) {
        let f = self.files.get_mut(&edit.file).expect("checked by caller");
        f.pending.apply(&f.base_text, edit.start, edit.end, &edit.text);
        let clean = f.pending.is_empty();
        self.recheck_local();
        self.commit_suppressed = false;
        self.events.push(ClientEvent::Applied { cmd, file: edit.file.clone() });
        if clean && self.mode == Mode::On {
            self.release_unneeded();
        }
    }

    fn recheck_local(&mut self) {
        let sources: Vec<SourceText> = self.texts().into_iter().map(|(k, t)| SourceText::new(k, t)).collect();
        self.local = analyze(&sources);
    }

    /// Locks implied by where an edit lands in the last buildable layout.
    fn span_needs(&self, edit: &Edit) -> BTreeSet<LockNeed> {
        let mut needs = BTreeSet::new();
        let f = &self.files[&edit.file];
        let entries = self.base.table.file_entries(&edit.file);
        let live = |s: Span| f.pending.map_span(s);
        let r = Span::new(edit.start, edit.end);
        // Insertions on an element's boundary land in the surrounding gap;
        // the text diff still catches any change they make to the element.
        let inside = |s: Span, p: usize| s.start < p && p < s.end;
        if r.is_empty() {
            let p = r.start;
            if let Some(m) = entries.iter().find(|e| e.kind != ElementKind::Class && inside(live(e.span), p)) {
                let header = m.kind == ElementKind::Field || live(m.header).contains_offset(p);
                needs.insert(if header { LockNeed::Defining(m.id) } else { LockNeed::Touch(m.id) });
            } else if let Some(c) = entries.iter().find(|e| e.kind == ElementKind::Class && inside(live(e.span), p)) {
                if inside(live(c.header), p) {
                    needs.insert(LockNeed::Defining(c.id));
                } else {
                    needs.insert(LockNeed::NewUnder(Some(c.id)));
                }
            } else {
                needs.insert(LockNeed::NewUnder(None));
            }
        } else {
            for e in &entries {
                if e.kind == ElementKind::Class {
                    if live(e.header).overlaps(r) {
                        needs.insert(LockNeed::Defining(e.id));
                    }
                } else if live(e.span).overlaps(r) {
                    let header = e.kind == ElementKind::Field || live(e.header).overlaps(r);
                    needs.insert(if header { LockNeed::Defining(e.id) } else { LockNeed::Touch(e.id) });
                }
            }
        }
        needs
    }

    /// Locks implied by comparing `texts` with the base, when every file
    /// parses. References resolved so far count even if others are missing.
    fn diff_needs(&self, texts: &BTreeMap<String, String>, renamable: &BTreeSet<ElementId>) -> BTreeSet<LockNeed> {
        let sources: Vec<SourceText> = texts.iter().map(|(k, t)| SourceText::new(k.clone(), t.clone())).collect();
        let a = analyze(&sources);
        if a.asts.len() != texts.len() {
            return BTreeSet::new();
        }
        let base_texts: BTreeMap<String, String> =
            self.files.iter().map(|(k, f)| (k.clone(), f.base_text.clone())).collect();
        required_locks(&base_texts, &self.base.table, &self.base.graph, texts, &a.asts, &a.bindings, renamable)
            .unwrap_or_default()
    }

    fn missing(&self, needs: &BTreeSet<LockNeed>, defining: &BTreeSet<ElementId>) -> Vec<LockNeed> {
        let any = |e: &ElementId| self.locks.iter().any(|l| l.elements.contains(e));
        let mut out: Vec<LockNeed> = needs
            .iter()
            .filter(|n| match n {
                LockNeed::Defining(e) => {
                    !(self.defining_targets.contains(e)
                        && self.locks.iter().any(|l| l.kind == LockKind::Defining && l.elements.contains(e)))
                }
                LockNeed::Touch(e) | LockNeed::Reference(e) => !any(e),
                LockNeed::NewUnder(p) => !self.locks.iter().any(|l| l.provisional.iter().any(|(_, q)| q == p)),
            })
            .copied()
            .collect();
        // A defining lock on an element also covers touching it.
        out.retain(|n| match n {
            LockNeed::Touch(e) | LockNeed::Reference(e) => !(defining.contains(e) && out_has_defining(needs, *e)),
            _ => true,
        });
        out
    }

    fn request(&mut self, needs: Vec<LockNeed>, origin: &str, purpose: Purpose) {
        let prior = self.locks.iter().map(|l| l.lock_id).collect();
        let mut sent = 0;
        for need in needs {
            let path_of = |id: ElementId| self.base.table.get(id).map(|e| (e.file.clone(), e.path.to_string()));
            let (file, target, class, referent) = match need {
                LockNeed::Defining(e) => match path_of(e) {
                    Some((f, p)) => (f, p, WireEditClass::Header, None),
                    None => continue,
                },
                LockNeed::Touch(e) => match path_of(e) {
                    Some((f, p)) => (f, p, WireEditClass::Body, None),
                    None => continue,
                },
                LockNeed::Reference(e) => match path_of(e) {
                    Some((f, p)) => (f, p.clone(), WireEditClass::NewReference, Some(p)),
                    None => continue,
                },
                LockNeed::NewUnder(parent) => {
                    let target = parent.and_then(path_of).map(|(_, p)| p).unwrap_or_default();
                    (origin.to_string(), target, WireEditClass::NewMember, None)
                }
            };
            let base_version = self.files.get(&file).map(|f| f.base_version).unwrap_or_default();
            self.send(Body::EditIntent(EditIntent {
                file_name: file,
                base_version,
                target_path: target,
                edit_class: class,
                referent_path: referent,
                release_lock_id: None,
            }));
            sent += 1;
        }
        if sent == 0 {
            // Nothing addressable; treat as a denial so the edit is dropped.
            self.finish_locking(
                purpose,
                Some(LockDeny { holder_name: String::new(), elements: vec![], reason: "unknown_element".into() }),
                &prior,
            );
            return;
        }
        self.op = Op::Locking { purpose, awaiting: sent, denied: None, prior, invalidated: false };
    }

    fn on_lock_reply(&mut self, reply: Result<LockGrant, LockDeny>) {
        let Op::Locking { awaiting, denied, purpose, .. } = &mut self.op else { return };
        *awaiting -= 1;
        let origins: BTreeSet<String> = match purpose {
            Purpose::Edit { edit, .. } => BTreeSet::from([edit.file.clone()]),
            Purpose::Audit { .. } => {
                self.files.iter().filter(|(_, f)| !f.pending.is_empty()).map(|(k, _)| k.clone()).collect()
            }
        };
        match reply {
            Ok(g) => {
                let lock = self.held_from_grant(&g, origins);
                match self.locks.iter_mut().find(|l| l.lock_id == lock.lock_id) {
                    Some(existing) => {
                        existing.kind = lock.kind;
                        existing.elements = lock.elements;
                        for p in lock.provisional {
                            if !existing.provisional.contains(&p) {
                                existing.provisional.push(p);
                            }
                        }
                        existing.origins.extend(lock.origins);
                    }
                    None => self.locks.push(lock),
                }
            }
            Err(d) => {
                if denied.is_none() {
                    *denied = Some(d);
                }
            }
        }
        let Op::Locking { awaiting, .. } = &self.op else { unreachable!() };
        if *awaiting == 0 {
            let Op::Locking { purpose, denied, prior, invalidated, .. } = std::mem::replace(&mut self.op, Op::Idle)
            else {
                unreachable!()
            };
            let denied = denied.or_else(|| {
                invalidated.then(|| LockDeny {
                    holder_name: String::new(),
                    elements: vec![],
                    reason: "superseded".into(),
                })
            });
            self.finish_locking(purpose, denied, &prior);
        }
    }

    fn finish_locking(&mut self, purpose: Purpose, denied: Option<LockDeny>, prior: &BTreeSet<u64>) {
        self.op = Op::Idle;
        match (purpose, denied) {
            (Purpose::Edit { cmd, edit, defining }, None) => {
                self.defining_targets.extend(defining);
                self.apply(cmd, edit);
            }
            (Purpose::Edit { cmd, .. }, Some(d)) => {
                self.release_new(prior);
                self.events.push(ClientEvent::Denied {
                    cmd,
                    holder: d.holder_name,
                    elements: d.elements,
                    reason: d.reason,
                });
            }
            (Purpose::Audit { defining }, None) => {
                self.defining_targets.extend(defining);
            }
            (Purpose::Audit { .. }, Some(d)) => {
                self.release_new(prior);
                for file in self.dirty_files() {
                    self.revert(&file);
                }
                self.events.push(ClientEvent::CommitBlocked { holder: d.holder_name, elements: d.elements });
            }
        }
    }

    fn held_from_grant(&self, g: &LockGrant, origins: BTreeSet<String>) -> HeldLock {
        let mut elements = BTreeSet::new();
        let mut provisional = Vec::new();
        for p in &g.elements {
            let (parent, last) = match p.rsplit_once('/') {
                Some((parent, last)) => (Some(parent), last),
                None => (None, p.as_str()),
            };
            if let Some(n) = last.strip_prefix('+').and_then(|n| n.parse::<u64>().ok()) {
                let parent_id =
                    parent.and_then(|pp| pp.parse::<ElementPath>().ok()).and_then(|pp| self.base.table.id_of(&pp));
                elements.insert(ElementId(n));
                provisional.push((ElementId(n), parent_id));
            } else if let Some(id) = p.parse::<ElementPath>().ok().and_then(|pp| self.base.table.id_of(&pp)) {
                elements.insert(id);
            }
        }
        HeldLock { lock_id: g.lock_id, kind: g.kind, elements, provisional, origins }
    }

    fn release_lock(&mut self, lock_id: u64) {
        self.locks.retain(|l| l.lock_id != lock_id);
        let file = self.files.keys().next().cloned().unwrap_or_default();
        let base_version = self.files.get(&file).map(|f| f.base_version).unwrap_or_default();
        self.send(Body::EditIntent(EditIntent {
            file_name: file,
            base_version,
            target_path: String::new(),
            edit_class: WireEditClass::Release,
            referent_path: None,
            release_lock_id: Some(lock_id),
        }));
        self.prune_defining_targets();
    }

    fn prune_defining_targets(&mut self) {
        let held: BTreeSet<ElementId> = self.locks.iter().flat_map(|l| l.elements.iter().copied()).collect();
        self.defining_targets.retain(|e| held.contains(e));
    }

    fn release_new(&mut self, prior: &BTreeSet<u64>) {
        let fresh: Vec<u64> = self.locks.iter().map(|l| l.lock_id).filter(|id| !prior.contains(id)).collect();
        for id in fresh {
            self.release_lock(id);
        }
    }

    /// Releases locks all of whose originating files are clean.
    fn release_unneeded(&mut self) {
        let clean: Vec<u64> =
            self.locks.iter().filter(|l| l.origins.iter().all(|f| !self.is_dirty(f))).map(|l| l.lock_id).collect();
        for id in clean {
            self.release_lock(id);
        }
    }

    /// Resets a file to its base; false for an unknown file.
    pub fn revert(&mut self, file: &str) -> bool {
        let Some(f) = self.files.get_mut(file) else { return false };
        f.pending.clear();
        self.recheck_local();
        self.commit_suppressed = false;
        if self.mode == Mode::On {
            self.release_unneeded();
        }
        true
    }

    fn maybe_commit(&mut self) {
        if self.mode != Mode::On || !matches!(self.op, Op::Idle) || self.commit_suppressed {
            return;
        }
        let dirty = self.dirty_files();
        if dirty.is_empty() || !self.local.is_buildable() {
            return;
        }
        let texts = self.texts();
        let defining = self.defining_targets.clone();
        let needs = self.diff_needs(&texts, &defining);
        let missing = self.missing(&needs, &defining);
        if !missing.is_empty() {
            let origin = dirty[0].clone();
            self.request(missing, &origin, Purpose::Audit { defining });
            return;
        }
        let last = dirty.len() - 1;
        for (i, file) in dirty.iter().enumerate() {
            let f = &self.files[file];
            let commit = Commit {
                file_name: file.clone(),
                base_version: f.base_version,
                text: texts[file].clone(),
                more: i != last,
            };
            self.send(Body::Commit(commit));
        }
        self.events.push(ClientEvent::CommitSent { files: dirty.clone() });
        self.op = Op::Committing { remaining: dirty.into_iter().collect(), rejected: Vec::new(), propagated: false };
    }

    fn on_commit_reply(&mut self, file: String, reply: Result<(u64, Vec<ElementInfo>), RejectReason>) {
        let Op::Committing { remaining, rejected, .. } = &mut self.op else { return };
        if !remaining.remove(&file) {
            return;
        }
        match reply {
            Ok((version, elements)) => {
                let f = self.files.get_mut(&file).expect("committed file exists");
                f.base_text = f.pending.render(&f.base_text);
                f.base_version = version;
                f.elements = elements;
                f.pending.clear();
                self.events.push(ClientEvent::Committed { file, version });
            }
            Err(reason) => rejected.push((file, reason)),
        }
        let Op::Committing { remaining, .. } = &self.op else { unreachable!() };
        if !remaining.is_empty() {
            return;
        }
        let Op::Committing { rejected, propagated, .. } = std::mem::replace(&mut self.op, Op::Idle) else {
            unreachable!()
        };
        if rejected.is_empty() {
            self.locks.clear();
            self.defining_targets.clear();
            self.retry_left = 1;
            self.rebuild_base();
            self.recheck_local();
            return;
        }
        let retryable = rejected.iter().all(|(_, r)| *r == RejectReason::Stale) || propagated;
        if retryable && self.retry_left > 0 {
            self.retry_left -= 1;
            return;
        }
        self.retry_left = 1;
        self.commit_suppressed = true;
        for (file, reason) in rejected {
            self.events.push(ClientEvent::CommitRejected { file, reason });
        }
    }

    fn on_welcome(&mut self, session: String, files: Vec<FileSnapshot>) {
        self.session = session.clone();
        self.files = files
            .into_iter()
            .map(|s| {
                let state = FileState {
                    base_text: s.text,
                    base_version: s.version,
                    elements: s.elements,
                    pending: Pending::default(),
                };
                (s.file_name, state)
            })
            .collect();
        self.locks.clear();
        self.defining_targets.clear();
        self.op = Op::Idle;
        self.commit_suppressed = false;
        self.retry_left = 1;
        self.rebuild_base();
        self.recheck_local();
        match std::mem::replace(&mut self.mode, Mode::On) {
            Mode::Joining => self.events.push(ClientEvent::Joined { session }),
            Mode::Reconciling { local_texts, report } => {
                self.events.push(ClientEvent::ModeChanged { on_record: true });
                let conflicts = report.map(|r| r.conflicts).unwrap_or_default();
                self.events.push(ClientEvent::Reconciled { conflicts, local_texts });
            }
            _ => {}
        }
    }

    fn rebuild_base(&mut self) {
        let sources: Vec<SourceText> =
            self.files.iter().map(|(k, f)| SourceText::new(k.clone(), f.base_text.clone())).collect();
        let analysis = analyze(&sources);
        let ids: BTreeMap<ElementPath, ElementId> = self
            .files
            .values()
            .flat_map(|f| f.elements.iter())
            .filter_map(|e| Some((e.path.parse().ok()?, ElementId(e.id))))
            .collect();
        let table = ElementTable::with_ids(&analysis.asts, &ids).unwrap_or_default();
        let graph = build_reference_graph(&table, &analysis.bindings);
        self.base = BaseProject { analysis, table, graph };
    }

    fn on_propagate(&mut self, file: String, version: u64, text: String, author: String, elements: Vec<ElementInfo>) {
        if self.mode != Mode::On || !self.files.contains_key(&file) {
            return;
        }
        let old_table = self.base.table.clone();
        let f = self.files.get_mut(&file).expect("checked above");
        let old_base = std::mem::replace(&mut f.base_text, text);
        f.base_version = version;
        f.elements = elements;
        let pending = std::mem::take(&mut f.pending);
        self.rebuild_base();
        let mut conflict = false;
        if !pending.is_empty() {
            let f = &self.files[&file];
            match pending.rebase(&file, &old_base, &old_table, &f.base_text, &self.base.table) {
                Some(p) => self.files.get_mut(&file).expect("exists").pending = p,
                None => conflict = true,
            }
        }
        self.recheck_local();
        match &mut self.op {
            Op::Locking { purpose: Purpose::Edit { edit, .. }, invalidated, .. } if edit.file == file => {
                *invalidated = true
            }
            Op::Committing { propagated, .. } => *propagated = true,
            _ => {}
        }
        self.commit_suppressed = false;
        self.events.push(ClientEvent::Propagated { file: file.clone(), version, author });
        if conflict {
            self.events.push(ClientEvent::RebaseConflict { file });
            if matches!(self.op, Op::Idle) {
                self.release_unneeded();
            }
        }
    }
}

fn out_has_defining(needs: &BTreeSet<LockNeed>, e: ElementId) -> bool {
    needs.contains(&LockNeed::Defining(e))
}

#[cfg(test)]
mod tests;
