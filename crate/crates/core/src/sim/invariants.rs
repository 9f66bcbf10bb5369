//! Checks over recorded traces. Everything here works from the trace alone:
//! the project state is rebuilt from the corpus and the commit records.

use std::collections::BTreeMap;

use super::{Trace, TraceEvent};
use crate::protocol::{decode, encode, Body, RejectReason};
use crate::semantics::{build_reference_graph, must_serialize, ElementId, ElementTable, IdAllocator, ReferenceGraph};
use crate::toylang::{analyze, ElementPath, SourceText};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub kind: &'static str,
    pub detail: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.kind, self.detail)
    }
}

/// Final file texts obtained by applying only the accepted commits, in
/// commit order, to the initial corpus.
pub fn sequential_replay_oracle(trace: &Trace) -> BTreeMap<String, String> {
    let mut texts = BTreeMap::new();
    for e in &trace.events {
        match e {
            TraceEvent::Corpus { file, text } | TraceEvent::Commit { file, text, .. } => {
                texts.insert(file.clone(), text.clone());
            }
            _ => {}
        }
    }
    texts
}

/// Every on-record client's final buffers equal the oracle output.
pub fn check_convergence(trace: &Trace) -> Vec<Violation> {
    let oracle = sequential_replay_oracle(trace);
    trace
        .events
        .iter()
        .filter_map(|e| match e {
            TraceEvent::Final { client, on_record: true, file, text } if oracle.get(file) != Some(text) => {
                Some(Violation { kind: "convergence", detail: format!("{client} diverges on {file}") })
            }
            _ => None,
        })
        .collect()
}

struct Replay {
    texts: BTreeMap<String, String>,
    ids: BTreeMap<String, BTreeMap<ElementPath, ElementId>>,
    state: Option<(ElementTable, ReferenceGraph)>,
}

impl Replay {
    fn project(&mut self) -> Option<&(ElementTable, ReferenceGraph)> {
        if self.state.is_none() {
            let sources: Vec<SourceText> =
                self.texts.iter().map(|(k, t)| SourceText::new(k.clone(), t.clone())).collect();
            let a = analyze(&sources);
            let all: BTreeMap<ElementPath, ElementId> = self.ids.values().flat_map(|m| m.clone()).collect();
            let table = ElementTable::with_ids(&a.asts, &all)?;
            let graph = build_reference_graph(&table, &a.bindings);
            self.state = Some((table, graph));
        }
        self.state.as_ref()
    }
}

/// Safety properties that must hold for every trace, complete or not.
pub fn check_invariants(trace: &Trace) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut v = |kind: &'static str, detail: String| out.push(Violation { kind, detail });

    let corpus: BTreeMap<String, String> = trace
        .events
        .iter()
        .filter_map(|e| match e {
            TraceEvent::Corpus { file, text } => Some((file.clone(), text.clone())),
            _ => None,
        })
        .collect();
    let sources: Vec<SourceText> = corpus.iter().map(|(k, t)| SourceText::new(k.clone(), t.clone())).collect();
    let initial = analyze(&sources);
    let initial_table = ElementTable::initial(&initial.asts, &mut IdAllocator::default());
    let mut ids: BTreeMap<String, BTreeMap<ElementPath, ElementId>> = BTreeMap::new();
    for e in initial_table.entries() {
        ids.entry(e.file.clone()).or_default().insert(e.path.clone(), e.id);
    }
    let mut replay = Replay { texts: corpus, ids, state: None };
    let mut versions: BTreeMap<String, u64> = BTreeMap::new();
    let mut history: BTreeMap<(String, u64), String> = BTreeMap::new();
    let mut live: BTreeMap<u64, (String, Vec<u64>)> = BTreeMap::new();

    for e in &trace.events {
        match e {
            TraceEvent::Wire { tick, from, to, line } => {
                let msg = match decode(line.as_bytes()) {
                    Ok(m) => m,
                    Err(err) => {
                        v("roundtrip", format!("t{tick} {from}>{to}: {err}"));
                        continue;
                    }
                };
                if encode(&msg).ok().as_deref() != Some(line.as_str()) {
                    v("roundtrip", format!("t{tick} {from}>{to}: re-encoding differs"));
                }
                if let Body::Propagate(p) = &msg.body {
                    if history.get(&(p.file_name.clone(), p.version)) != Some(&p.text) {
                        v(
                            "buildable_propagation",
                            format!("t{tick} propagate of unrecorded {} v{}", p.file_name, p.version),
                        );
                    }
                    let mut texts = replay.texts.clone();
                    texts.insert(p.file_name.clone(), p.text.clone());
                    let sources: Vec<SourceText> = texts.into_iter().map(|(k, t)| SourceText::new(k, t)).collect();
                    if !analyze(&sources).is_buildable() {
                        v(
                            "buildable_propagation",
                            format!("t{tick} {} v{} to {to} is not buildable", p.file_name, p.version),
                        );
                    }
                }
            }
            TraceEvent::Commit { tick, file, version, text, elements, .. } => {
                let prev = versions.get(file).copied().unwrap_or(0);
                if *version != prev + 1 {
                    v("version_linearity", format!("t{tick} {file} v{prev} -> v{version}"));
                }
                versions.insert(file.clone(), *version);
                history.insert((file.clone(), *version), text.clone());
                replay.texts.insert(file.clone(), text.clone());
                let map = elements
                    .iter()
                    .filter_map(|(id, p)| Some((p.parse::<ElementPath>().ok()?, ElementId(*id))))
                    .collect();
                replay.ids.insert(file.clone(), map);
                replay.state = None;
            }
            TraceEvent::Reject { tick, author, file, reason } => {
                if matches!(reason, RejectReason::LockViolation | RejectReason::Unbuildable) {
                    v("reject", format!("t{tick} {author} {file} {reason:?}"));
                }
            }
            TraceEvent::Granted { tick, holder, lock_id, elements, .. } => {
                let Some((table, graph)) = replay.project() else {
                    v("lock_safety", format!("t{tick} replayed project has no consistent element table"));
                    continue;
                };
                let related =
                    |a: u64, b: u64| must_serialize(ElementId(a), ElementId(b), table, graph).unwrap_or(a == b);
                for (other_id, (other, held)) in &live {
                    if other == holder {
                        continue;
                    }
                    if let Some((a, b)) =
                        elements.iter().flat_map(|a| held.iter().map(move |b| (*a, *b))).find(|(a, b)| related(*a, *b))
                    {
                        v("lock_safety", format!("t{tick} lock {lock_id} of {holder} ({a}) conflicts with lock {other_id} of {other} ({b})"));
                    }
                }
                live.insert(*lock_id, (holder.clone(), elements.clone()));
            }
            TraceEvent::Released { lock_ids, .. } => {
                for id in lock_ids {
                    live.remove(id);
                }
            }
            _ => {}
        }
    }
    out
}
