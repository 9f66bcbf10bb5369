//! Three-way element comparison for a session returning on the record.

use std::collections::BTreeMap;

use crate::protocol::{Conflict, ConflictKind};
use crate::semantics::{element_defs, ElementKind, ElementTable};
use crate::toylang::{parse, ElementPath, SourceText, Span};

fn slice(text: &str, span: Span) -> &str {
    text.get(span.start..span.end).unwrap_or_default()
}

/// What identifies a change to an element: the header for a class (its
/// members are compared on their own), the full text for a member.
fn signature(text: &str, kind: ElementKind, header: Span, span: Span) -> String {
    match kind {
        ElementKind::Class => slice(text, header).to_string(),
        _ => slice(text, span).to_string(),
    }
}

/// Conflicts between the edits made locally since `base` and those that
/// reached the canonical project (`upstream`) in the meantime.
///
/// Base and upstream elements are matched by id, base and local elements by
/// path. A locally unparseable file counts as changing every element in it.
pub fn reconcile(
    base_texts: &BTreeMap<String, String>,
    base_table: &ElementTable,
    upstream_texts: &BTreeMap<String, String>,
    upstream_table: &ElementTable,
    local_texts: &BTreeMap<String, String>,
) -> Vec<Conflict> {
    let mut conflicts = Vec::new();
    for (file, base_text) in base_texts {
        let local_text = local_texts.get(file).unwrap_or(base_text);
        if local_text == base_text {
            continue;
        }
        let (ast, _) = parse(&SourceText::new(file.clone(), local_text.clone()));
        let local: Option<BTreeMap<ElementPath, String>> = ast.map(|ast| {
            element_defs(file, &ast)
                .into_iter()
                .map(|d| (d.path, signature(local_text, d.kind, d.header, d.span)))
                .collect()
        });
        for e in base_table.file_entries(file) {
            let base_sig = signature(base_text, e.kind, e.header, e.span);
            let (locally_changed, locally_deleted) = match &local {
                None => (true, false),
                Some(map) => match map.get(&e.path) {
                    None => (true, true),
                    Some(sig) => (*sig != base_sig, false),
                },
            };
            if !locally_changed {
                continue;
            }
            let kind = match upstream_table.get(e.id) {
                None if locally_deleted => None,
                None => Some(ConflictKind::DeletedUpstream),
                Some(u) => {
                    let up_text = upstream_texts.get(&u.file).map(String::as_str).unwrap_or_default();
                    (signature(up_text, u.kind, u.header, u.span) != base_sig).then_some(ConflictKind::BothChanged)
                }
            };
            if let Some(kind) = kind {
                conflicts.push(Conflict { file_name: file.clone(), element_path: e.path.to_string(), kind });
            }
        }
    }
    conflicts.sort();
    conflicts
}
