//! Random scenarios. The generator drives a live [`Sim`] so every edit it
//! emits is positioned against the buffer the client will actually have when
//! the scenario is replayed.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Action, Event, Scenario, Sim};
use crate::toylang::{analyze, AstNode, DiagCode, NodeKind, ProjectAnalysis, SourceText};

#[derive(Debug, Clone)]
enum Task {
    /// Append `suffix` to every unresolved use of `old`.
    FixUnresolved { old: String, suffix: String },
    /// Add an argument to every call of `method` with too few.
    FixArity { method: String },
    /// Close the parenthesis opened after `marker`.
    CloseParen { file: String, marker: String },
}

struct Gen {
    rng: ChaCha8Rng,
    counter: u64,
    tasks: BTreeMap<String, Vec<Task>>,
}

fn corpus(rng: &mut ChaCha8Rng) -> Vec<(String, String)> {
    let n_files = rng.gen_range(2..=3);
    let mut methods: Vec<String> = Vec::new();
    let mut fields: Vec<String> = Vec::new();
    let mut files = Vec::new();
    let mut class_no = 0;
    for f in 0..n_files {
        let mut text = String::new();
        for _ in 0..rng.gen_range(1..=2) {
            let field = format!("f{}", fields.len());
            fields.push(field.clone());
            text.push_str(&format!("class K{class_no} {{ int {field}; "));
            class_no += 1;
            for _ in 0..rng.gen_range(2..=3) {
                let name = format!("m{}", methods.len());
                let expr = match rng.gen_range(0..4) {
                    0 => "a".to_string(),
                    1 => format!("a + {}", fields.choose(rng).expect("one field exists")),
                    2 if !methods.is_empty() => format!("{}(a)", methods.choose(rng).expect("nonempty")),
                    _ => format!("{}", rng.gen_range(0..10)),
                };
                text.push_str(&format!("int {name}(int a) {{ return {expr}; }} "));
                methods.push(name);
            }
            text.push_str("} ");
        }
        files.push((format!("file{f}.toy"), text.trim_end().to_string()));
    }
    files
}

fn members(ast: &AstNode) -> Vec<(&AstNode, &AstNode)> {
    ast.classes()
        .flat_map(|c| {
            c.children.iter().filter(|m| matches!(m.kind, NodeKind::Field | NodeKind::Method)).map(move |m| (c, m))
        })
        .collect()
}

fn insert(client: &str, file: &str, offset: usize, text: impl Into<String>) -> Action {
    Action::Insert { client: client.into(), file: file.into(), offset, text: text.into(), expect: None }
}

impl Gen {
    fn fresh(&mut self) -> u64 {
        self.counter += 1;
        self.counter
    }

    /// Actions for one step of `client`, or empty when nothing applies.
    fn step(&mut self, sim: &Sim, client: &str) -> Vec<Action> {
        let c = sim.client(client).expect("client exists");
        let texts = c.texts();
        let sources: Vec<SourceText> = texts.iter().map(|(k, t)| SourceText::new(k.clone(), t.clone())).collect();
        let a = analyze(&sources);
        let pending = self.tasks.get(client).map_or(0, Vec::len);
        if pending > 0 && self.rng.gen_bool(0.7) {
            let task = self.tasks.get_mut(client).expect("checked").remove(0);
            let actions = self.run_task(client, &texts, &a, task);
            if !actions.is_empty() {
                return actions;
            }
        }
        let dirty = c.dirty_files();
        if !dirty.is_empty() && pending == 0 && !a.is_buildable() && self.rng.gen_bool(0.5) {
            let file = dirty.choose(&mut self.rng).expect("nonempty").clone();
            return vec![Action::Revert { client: client.into(), file }];
        }
        let roll = self.rng.gen_range(0..100);
        if roll < 4 {
            return if c.is_on_record() {
                vec![Action::OffRecord { client: client.into() }]
            } else {
                vec![Action::OnRecord { client: client.into() }]
            };
        }
        if !c.is_on_record() && roll < 12 {
            return vec![Action::OnRecord { client: client.into() }];
        }
        if roll < 7 && !dirty.is_empty() {
            let file = dirty.choose(&mut self.rng).expect("nonempty").clone();
            self.tasks.remove(client);
            return vec![Action::Revert { client: client.into(), file }];
        }
        // Elements other clients hold locks on, to provoke contention.
        let contested: Vec<String> = sim
            .server()
            .locks()
            .records()
            .iter()
            .filter(|r| r.holder != c.session())
            .flat_map(|r| r.unit.elements.iter())
            .filter_map(|e| sim.server().table().get(*e))
            .map(|e| e.path.to_string())
            .collect();
        let parsed: Vec<&String> = a.asts.keys().collect();
        let Some(mut file) = parsed.choose(&mut self.rng).map(|f| (*f).clone()) else { return Vec::new() };
        let mut target = None;
        if !contested.is_empty() && self.rng.gen_bool(0.5) {
            let want = contested.choose(&mut self.rng).expect("nonempty");
            for (f, ast) in &a.asts {
                if let Some(hit) = members(ast)
                    .into_iter()
                    .find(|(c, m)| format!("{}/{}", c.name_text().unwrap_or(""), m.name_text().unwrap_or("")) == *want)
                {
                    file = f.clone();
                    target = Some(hit);
                }
            }
        }
        let ast = &a.asts[&file];
        let text = &texts[&file];
        let ms = members(ast);
        let Some((class, member)) = target.or_else(|| ms.choose(&mut self.rng).copied()) else { return Vec::new() };
        let name = member.name.as_ref().expect("members are named");
        let incoming = a.bindings.iter().any(|(_, b)| {
            b.target
                .element
                .as_ref()
                .is_some_and(|p| p.to_string() == format!("{}/{}", class.name_text().unwrap_or(""), name.text))
        });
        let class_close = class.span.end - 1;
        match self.rng.gen_range(0..100) {
            // Introducing a new method, sometimes calling an existing one.
            0..=14 => {
                let n = self.fresh();
                let body = match ms.iter().find(|(_, m)| m.kind == NodeKind::Method && self.rng.gen_bool(0.4)) {
                    Some((_, callee)) if callee.children.iter().filter(|p| p.kind == NodeKind::Param).count() == 1 => {
                        format!("{}(a)", callee.name_text().unwrap_or("a"))
                    }
                    _ => "a".into(),
                };
                vec![insert(client, &file, class_close, format!("int {client}m{n}(int a) {{ return {body}; }} "))]
            }
            // Introducing a member variable.
            15..=24 => {
                let n = self.fresh();
                vec![insert(client, &file, class_close, format!("int {client}f{n}; "))]
            }
            // Changing a body, in one keystroke or across two steps.
            25..=49 if member.kind == NodeKind::Method => {
                let body = member.body().expect("methods have bodies");
                let Some(ret) = text[body.start..body.end].find("return ") else { return Vec::new() };
                let at = body.start + ret + "return ".len();
                if self.rng.gen_bool(0.5) {
                    let n = self.fresh();
                    let marker = format!("({n} + ");
                    self.tasks
                        .entry(client.into())
                        .or_default()
                        .push(Task::CloseParen { file: file.clone(), marker: marker.clone() });
                    vec![insert(client, &file, at, marker)]
                } else {
                    vec![insert(client, &file, at, format!("{} + ", self.rng.gen_range(1..9)))]
                }
            }
            // Renaming a member.
            50..=64 => {
                let n = self.fresh();
                let suffix = format!("_{n}");
                if incoming {
                    self.tasks
                        .entry(client.into())
                        .or_default()
                        .push(Task::FixUnresolved { old: name.text.clone(), suffix: suffix.clone() });
                }
                vec![insert(client, &file, name.span.end, suffix)]
            }
            // Changing parameters.
            65..=79 if member.kind == NodeKind::Method => {
                let close = member.header.expect("methods have headers").end - 1;
                let n = self.fresh();
                let has_params = member.children.iter().any(|p| p.kind == NodeKind::Param);
                let param = if has_params { format!(", int b{n}") } else { format!("int b{n}") };
                if incoming {
                    self.tasks.entry(client.into()).or_default().push(Task::FixArity { method: name.text.clone() });
                }
                vec![insert(client, &file, close, param)]
            }
            // Removing a member nothing refers to.
            80..=94 if !incoming => {
                let mut len = member.span.len();
                if text[member.span.end..].starts_with(' ') {
                    len += 1;
                }
                vec![Action::Delete { client: client.into(), file, offset: member.span.start, len, expect: None }]
            }
            _ => Vec::new(),
        }
    }

    fn run_task(
        &mut self,
        client: &str,
        texts: &BTreeMap<String, String>,
        a: &ProjectAnalysis,
        task: Task,
    ) -> Vec<Action> {
        let mut out = Vec::new();
        match task {
            Task::FixUnresolved { old, suffix } => {
                for (file, diags) in &a.diagnostics {
                    let mut sites: Vec<usize> = diags
                        .iter()
                        .filter(|d| {
                            d.code == DiagCode::UnresolvedName
                                && texts[file].get(d.span.start..d.span.end) == Some(old.as_str())
                        })
                        .map(|d| d.span.end)
                        .collect();
                    sites.sort_unstable_by(|x, y| y.cmp(x));
                    sites.dedup();
                    out.extend(sites.into_iter().map(|s| insert(client, file, s, suffix.clone())));
                }
            }
            Task::FixArity { method } => {
                for (file, diags) in &a.diagnostics {
                    let mut sites: Vec<usize> = diags
                        .iter()
                        .filter(|d| {
                            d.code == DiagCode::ArityMismatch
                                && texts[file].get(d.span.start..).is_some_and(|t| t.starts_with(&method))
                        })
                        .map(|d| d.span.end - 1)
                        .collect();
                    sites.sort_unstable_by(|x, y| y.cmp(x));
                    sites.dedup();
                    for s in sites {
                        let empty = texts[file][..s].ends_with('(');
                        out.push(insert(client, file, s, if empty { "1" } else { ", 1" }));
                    }
                }
            }
            Task::CloseParen { file, marker } => {
                if let Some(text) = texts.get(&file) {
                    if let Some(at) = text.find(&marker) {
                        if let Some(semi) = text[at..].find(';') {
                            out.push(insert(client, &file, at + semi, ")"));
                        }
                    }
                }
            }
        }
        out
    }
}

/// Builds a random scenario over a generated corpus. The event stream mixes
/// every kind of edit the engine distinguishes, and ends by bringing every
/// client back on the record with clean buffers and asserting convergence.
pub fn generate_random_scenario(seed: u64, n_clients: usize, n_steps: usize) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let files = corpus(&mut rng);
    let clients: Vec<String> = (0..n_clients.max(1)).map(|i| format!("c{i}")).collect();
    let mut scenario = Scenario { clients: clients.clone(), files: files.clone(), events: Vec::new() };
    if n_steps == 0 {
        return scenario;
    }
    let mut sim = Sim::new(&files, &clients).expect("generated corpus is buildable");
    let mut g = Gen { rng, counter: 0, tasks: BTreeMap::new() };
    let mut tick = 0;
    let emit = |sim: &mut Sim, tick: u64, actions: Vec<Action>, events: &mut Vec<Event>| {
        if actions.is_empty() {
            return;
        }
        sim.run_tick(tick, &actions).expect("loopback transport");
        events.extend(actions.into_iter().map(|action| Event { tick, action }));
    };
    for _ in 0..n_steps {
        tick += 1;
        let client = clients.choose(&mut g.rng).expect("at least one client").clone();
        let actions = g.step(&sim, &client);
        emit(&mut sim, tick, actions, &mut scenario.events);
    }
    // Wind down: everyone on the record, then clean buffers.
    tick += 1;
    let back: Vec<Action> = sim
        .clients()
        .iter()
        .filter(|c| !c.is_on_record())
        .map(|c| Action::OnRecord { client: c.name().to_string() })
        .collect();
    emit(&mut sim, tick, back, &mut scenario.events);
    tick += 1;
    let reverts: Vec<Action> = sim
        .clients()
        .iter()
        .flat_map(|c| {
            c.dirty_files().into_iter().map(move |file| Action::Revert { client: c.name().to_string(), file })
        })
        .collect();
    emit(&mut sim, tick, reverts, &mut scenario.events);
    tick += 1;
    let checks = files.iter().map(|(f, _)| Action::AssertConverged { file: f.clone() }).collect();
    emit(&mut sim, tick, checks, &mut scenario.events);
    scenario
}
