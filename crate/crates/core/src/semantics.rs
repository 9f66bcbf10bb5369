//! Element identity, the reference graph and the dependency predicates that
//! drive locking.
//!
//! Lockable elements are classes and their members (fields and methods).
//! Two elements are *dependent* when they are the same element, share an AST
//! parent, or one references the other. Enforcement uses the narrower
//! *must-serialize* relation, which waives the shared-parent rule for
//! parents whose children commute (classes, and the program itself).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::toylang::{AstNode, BindingTable, ElementPath, NodeKind, Span};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ElementId(pub u64);

impl fmt::Display for ElementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Issues element ids. Ids are never reused for the lifetime of a project.
#[derive(Debug, Clone)]
pub struct IdAllocator {
    next: u64,
}

impl Default for IdAllocator {
    fn default() -> Self {
        IdAllocator { next: 1 }
    }
}

impl IdAllocator {
    pub fn fresh(&mut self) -> ElementId {
        let id = ElementId(self.next);
        self.next += 1;
        id
    }

    pub fn peek(&self) -> u64 {
        self.next
    }

    pub fn starting_at(next: u64) -> Self {
        IdAllocator { next: next.max(1) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ElementKind {
    Class,
    Field,
    Method,
}

impl ElementKind {
    fn of(kind: NodeKind) -> Option<Self> {
        match kind {
            NodeKind::Class => Some(ElementKind::Class),
            NodeKind::Field => Some(ElementKind::Field),
            NodeKind::Method => Some(ElementKind::Method),
            _ => None,
        }
    }
}

/// A lockable element as found in one parsed file, before ids are assigned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElementDef {
    pub file: String,
    pub path: ElementPath,
    pub kind: ElementKind,
    pub span: Span,
    pub header: Span,
    pub body: Option<Span>,
}

/// Lists the classes and members of a file in source order.
pub fn element_defs(file: &str, ast: &AstNode) -> Vec<ElementDef> {
    let mut out = Vec::new();
    for class in ast.classes() {
        let cname = class.name_text().expect("class has a name");
        out.push(ElementDef {
            file: file.to_string(),
            path: ElementPath::class(cname),
            kind: ElementKind::Class,
            span: class.span,
            header: class.header.expect("class header"),
            body: class.body(),
        });
        for m in &class.children {
            let kind = ElementKind::of(m.kind).expect("class members are fields or methods");
            out.push(ElementDef {
                file: file.to_string(),
                path: ElementPath::member(cname, m.name_text().expect("member has a name")),
                kind,
                span: m.span,
                header: m.header.expect("member header"),
                body: m.body(),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElementEntry {
    pub id: ElementId,
    pub file: String,
    pub path: ElementPath,
    pub kind: ElementKind,
    pub span: Span,
    pub header: Span,
    pub body: Option<Span>,
    /// `None` for classes, whose parent is the program.
    pub parent: Option<ElementId>,
}

/// Bidirectional map between element ids and their current location.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ElementTable {
    entries: BTreeMap<ElementId, ElementEntry>,
    by_path: BTreeMap<ElementPath, ElementId>,
    /// File versions the table was computed from.
    pub generation: BTreeMap<String, u64>,
}

impl ElementTable {
    pub fn get(&self, id: ElementId) -> Option<&ElementEntry> {
        self.entries.get(&id)
    }

    pub fn id_of(&self, path: &ElementPath) -> Option<ElementId> {
        self.by_path.get(path).copied()
    }

    pub fn by_path(&self, path: &ElementPath) -> Option<&ElementEntry> {
        self.id_of(path).and_then(|id| self.entries.get(&id))
    }

    pub fn contains(&self, id: ElementId) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ElementId> + '_ {
        self.entries.keys().copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = &ElementEntry> {
        self.entries.values()
    }

    /// Entries of one file in source order.
    pub fn file_entries(&self, file: &str) -> Vec<&ElementEntry> {
        let mut v: Vec<&ElementEntry> = self.entries.values().filter(|e| e.file == file).collect();
        v.sort_by_key(|e| (e.span.start, e.kind != ElementKind::Class));
        v
    }

    pub fn children(&self, parent: ElementId) -> Vec<&ElementEntry> {
        let mut v: Vec<&ElementEntry> = self.entries.values().filter(|e| e.parent == Some(parent)).collect();
        v.sort_by_key(|e| e.span.start);
        v
    }

    fn insert(&mut self, entry: ElementEntry) {
        self.by_path.insert(entry.path.clone(), entry.id);
        self.entries.insert(entry.id, entry);
    }

    /// Table for `asts` using ids already known by path, e.g. from a
    /// snapshot sent by the server. Returns `None` if any element is missing.
    pub fn with_ids(asts: &BTreeMap<String, AstNode>, ids: &BTreeMap<ElementPath, ElementId>) -> Option<ElementTable> {
        let mut table = ElementTable::default();
        for (file, ast) in asts {
            let mut current_class = None;
            for def in element_defs(file, ast) {
                let id = *ids.get(&def.path)?;
                let parent = if def.kind == ElementKind::Class {
                    current_class = Some(id);
                    None
                } else {
                    current_class
                };
                table.insert(entry_from(def, id, parent));
            }
        }
        Some(table)
    }

    /// Fresh table where every element gets a new id, in file-name then
    /// source order.
    pub fn initial(asts: &BTreeMap<String, AstNode>, alloc: &mut IdAllocator) -> ElementTable {
        let mut table = ElementTable::default();
        for (file, ast) in asts {
            let mut current_class = None;
            for def in element_defs(file, ast) {
                let id = alloc.fresh();
                let parent = if def.kind == ElementKind::Class {
                    current_class = Some(id);
                    None
                } else {
                    current_class
                };
                table.insert(entry_from(def, id, parent));
            }
            table.generation.insert(file.clone(), 0);
        }
        table
    }
}

fn entry_from(def: ElementDef, id: ElementId, parent: Option<ElementId>) -> ElementEntry {
    ElementEntry {
        id,
        file: def.file,
        path: def.path,
        kind: def.kind,
        span: def.span,
        header: def.header,
        body: def.body,
        parent,
    }
}

/// Ids that may survive a change of path during the next reassignment.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Pins {
    /// Existing elements under a defining lock; they keep their id across a
    /// rename.
    pub renamable: BTreeSet<ElementId>,
    /// Ids reserved for new elements, with the parent they are expected
    /// under (`None` for a new class).
    pub provisional: Vec<(ElementId, Option<ElementId>)>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SemanticsError {
    #[error("unknown element {0}")]
    UnknownElement(ElementId),
    #[error("element id {0} is claimed by more than one element")]
    PathCollision(ElementId),
}

/// Carries ids forward from `previous` to the elements of a new buildable
/// project state.
///
/// An element keeps its id when it is found at the same place (same class
/// name, or same member name under the same class id). Unmatched elements
/// then take, in source order, the ids of vanished elements pinned as
/// renamable under the same parent, then provisional ids reserved for that
/// parent; anything left gets a fresh id.
pub fn assign_element_ids(
    previous: &ElementTable,
    asts: &BTreeMap<String, AstNode>,
    pins: &Pins,
    alloc: &mut IdAllocator,
) -> Result<ElementTable, SemanticsError> {
    let mut seen = BTreeSet::new();
    for id in pins.renamable.iter().chain(pins.provisional.iter().map(|(id, _)| id)) {
        if !seen.insert(*id) {
            return Err(SemanticsError::PathCollision(*id));
        }
    }
    for (id, _) in &pins.provisional {
        if previous.contains(*id) {
            return Err(SemanticsError::PathCollision(*id));
        }
    }

    // Group new defs: classes in file order, members per class.
    struct NewClass {
        def: ElementDef,
        members: Vec<ElementDef>,
    }
    let mut new_classes: Vec<NewClass> = Vec::new();
    for (file, ast) in asts {
        for def in element_defs(file, ast) {
            if def.kind == ElementKind::Class {
                new_classes.push(NewClass { def, members: Vec::new() });
            } else {
                new_classes.last_mut().expect("member follows class").members.push(def);
            }
        }
    }

    let mut used: BTreeSet<ElementId> = BTreeSet::new();
    let mut provisional_left: Vec<(ElementId, Option<ElementId>)> = pins.provisional.clone();
    let mut take_provisional = |parent: Option<ElementId>| -> Option<ElementId> {
        let pos = provisional_left.iter().position(|(_, p)| *p == parent)?;
        Some(provisional_left.remove(pos).0)
    };

    // Classes by name.
    let mut class_ids: Vec<Option<ElementId>> = new_classes
        .iter()
        .map(|c| previous.by_path(&c.def.path).filter(|e| e.kind == ElementKind::Class).map(|e| e.id))
        .collect();
    used.extend(class_ids.iter().flatten());
    let mut vanished_classes: Vec<&ElementEntry> = previous
        .entries()
        .filter(|e| e.kind == ElementKind::Class && !used.contains(&e.id) && pins.renamable.contains(&e.id))
        .collect();
    vanished_classes.sort_by_key(|e| (e.file.clone(), e.span.start));
    for (i, c) in new_classes.iter().enumerate() {
        if class_ids[i].is_some() {
            continue;
        }
        if let Some(pos) = vanished_classes.iter().position(|v| v.file == c.def.file) {
            let id = vanished_classes.remove(pos).id;
            used.insert(id);
            class_ids[i] = Some(id);
        }
    }
    for (i, _) in new_classes.iter().enumerate() {
        if class_ids[i].is_none() {
            let id = take_provisional(None).unwrap_or_else(|| alloc.fresh());
            used.insert(id);
            class_ids[i] = Some(id);
        }
    }

    let mut table = ElementTable::default();
    for (i, class) in new_classes.into_iter().enumerate() {
        let class_id = class_ids[i].expect("assigned above");
        let old_members: Vec<&ElementEntry> =
            if previous.contains(class_id) { previous.children(class_id) } else { Vec::new() };
        let mut member_ids: Vec<Option<ElementId>> = class
            .members
            .iter()
            .map(|m| old_members.iter().find(|o| o.path.member == m.path.member && o.kind == m.kind).map(|o| o.id))
            .collect();
        used.extend(member_ids.iter().flatten());
        let mut vanished: Vec<&ElementEntry> =
            old_members.iter().copied().filter(|o| !used.contains(&o.id) && pins.renamable.contains(&o.id)).collect();
        for (j, m) in class.members.iter().enumerate() {
            if member_ids[j].is_some() {
                continue;
            }
            if let Some(pos) = vanished.iter().position(|v| v.kind == m.kind) {
                let id = vanished.remove(pos).id;
                used.insert(id);
                member_ids[j] = Some(id);
            }
        }
        for id in member_ids.iter_mut().filter(|id| id.is_none()) {
            let fresh = take_provisional(Some(class_id)).unwrap_or_else(|| alloc.fresh());
            used.insert(fresh);
            *id = Some(fresh);
        }
        table.insert(entry_from(class.def, class_id, None));
        for (m, id) in class.members.into_iter().zip(member_ids) {
            table.insert(entry_from(m, id.expect("assigned above"), Some(class_id)));
        }
    }
    table.generation = previous.generation.clone();
    Ok(table)
}

/// Directed edges `referencing -> referenced` between elements.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReferenceGraph {
    nodes: BTreeSet<ElementId>,
    edges: BTreeSet<(ElementId, ElementId)>,
}

impl ReferenceGraph {
    pub fn contains(&self, id: ElementId) -> bool {
        self.nodes.contains(&id)
    }

    pub fn has_edge(&self, from: ElementId, to: ElementId) -> bool {
        self.edges.contains(&(from, to))
    }

    pub fn edges(&self) -> impl Iterator<Item = (ElementId, ElementId)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn predecessors(&self, target: ElementId) -> BTreeSet<ElementId> {
        self.edges.iter().filter(|(_, to)| *to == target).map(|(from, _)| *from).collect()
    }
}

pub fn build_reference_graph(table: &ElementTable, bindings: &BindingTable) -> ReferenceGraph {
    let mut graph = ReferenceGraph { nodes: table.ids().collect(), edges: BTreeSet::new() };
    for (_, b) in bindings.iter() {
        let (Some(from), Some(to)) = (&b.enclosing, &b.target.element) else { continue };
        if let (Some(f), Some(t)) = (table.id_of(from), table.id_of(to)) {
            graph.edges.insert((f, t));
        }
    }
    graph
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BreakableSet {
    pub target: ElementId,
    pub members: BTreeSet<ElementId>,
}

/// Elements holding a direct reference to `target`.
pub fn breakable_set(graph: &ReferenceGraph, target: ElementId) -> Result<BreakableSet, SemanticsError> {
    if !graph.contains(target) {
        return Err(SemanticsError::UnknownElement(target));
    }
    Ok(BreakableSet { target, members: graph.predecessors(target) })
}

fn lookup(table: &ElementTable, id: ElementId) -> Result<&ElementEntry, SemanticsError> {
    table.get(id).ok_or(SemanticsError::UnknownElement(id))
}

/// Same element, same AST parent, or a reference in either direction.
pub fn dependent(
    e1: ElementId,
    e2: ElementId,
    table: &ElementTable,
    graph: &ReferenceGraph,
) -> Result<bool, SemanticsError> {
    let a = lookup(table, e1)?;
    let b = lookup(table, e2)?;
    Ok(e1 == e2 || a.parent == b.parent || graph.has_edge(e1, e2) || graph.has_edge(e2, e1))
}

/// `dependent`, except that siblings of a commutative parent may be edited
/// concurrently. Every lockable element's parent is a class or the program,
/// both of which commute, so only identity and references remain.
pub fn must_serialize(
    e1: ElementId,
    e2: ElementId,
    table: &ElementTable,
    graph: &ReferenceGraph,
) -> Result<bool, SemanticsError> {
    lookup(table, e1)?;
    lookup(table, e2)?;
    Ok(e1 == e2 || graph.has_edge(e1, e2) || graph.has_edge(e2, e1))
}

/// A lock requirement derived from comparing two project states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LockNeed {
    /// Header text changed, or the element was removed.
    Defining(ElementId),
    /// Some other part of the element's text changed.
    Touch(ElementId),
    /// A new element appeared under this parent (`None` for a new class).
    NewUnder(Option<ElementId>),
    /// A new reference to a pre-existing element.
    Reference(ElementId),
}

/// Locks needed to move from `old` to `new`. Elements are matched the way
/// [`assign_element_ids`] would match them with `renamable` pinned; ids at
/// or above `old_alloc` mark new elements.
pub fn required_locks(
    old_texts: &BTreeMap<String, String>,
    old_table: &ElementTable,
    old_graph: &ReferenceGraph,
    new_texts: &BTreeMap<String, String>,
    new_asts: &BTreeMap<String, AstNode>,
    new_bindings: &BindingTable,
    renamable: &BTreeSet<ElementId>,
) -> Result<BTreeSet<LockNeed>, SemanticsError> {
    let first_new = old_table.ids().map(|i| i.0).max().unwrap_or(0) + 1;
    let mut alloc = IdAllocator::starting_at(first_new.max(1 << 40));
    let pins = Pins { renamable: renamable.clone(), provisional: Vec::new() };
    let new_table = assign_element_ids(old_table, new_asts, &pins, &mut alloc)?;
    let new_graph = build_reference_graph(&new_table, new_bindings);
    let slice = |texts: &BTreeMap<String, String>, file: &str, span: Span| -> String {
        texts.get(file).and_then(|t| t.get(span.start..span.end)).unwrap_or_default().to_string()
    };
    let mut needs = BTreeSet::new();
    for old in old_table.entries() {
        match new_table.get(old.id) {
            None => {
                needs.insert(LockNeed::Defining(old.id));
            }
            Some(new) => {
                let header_changed = slice(old_texts, &old.file, old.header) != slice(new_texts, &new.file, new.header);
                if header_changed {
                    needs.insert(LockNeed::Defining(old.id));
                } else if old.kind != ElementKind::Class
                    && slice(old_texts, &old.file, old.span) != slice(new_texts, &new.file, new.span)
                {
                    needs.insert(LockNeed::Touch(old.id));
                }
            }
        }
    }
    for new in new_table.entries() {
        if old_table.contains(new.id) {
            continue;
        }
        match new.parent {
            None => {
                needs.insert(LockNeed::NewUnder(None));
            }
            Some(p) if old_table.contains(p) => {
                needs.insert(LockNeed::NewUnder(Some(p)));
            }
            Some(_) => {}
        }
    }
    for (from, to) in new_graph.edges() {
        if old_table.contains(to) && !old_graph.has_edge(from, to) {
            needs.insert(LockNeed::Reference(to));
        }
    }
    Ok(needs)
}
