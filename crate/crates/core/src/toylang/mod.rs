//! MiniLang: a small Java-like language used as the unit of buildability.
//!
//! A file is *buildable* when it parses and every reference in it resolves
//! against the whole project (cross-file references are allowed), call
//! arities match, member names are unique per class and every class-typed
//! declaration names an existing class.

pub mod ast;
pub mod lexer;
pub mod parser;
pub mod resolve;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use ast::{AstNode, BinOp, ElementPath, Ident, NodeKind, Span, TypeName};
pub use parser::parse;
pub use resolve::{Binding, BindingTable, DeclKind, DeclTarget, RefKind, RefSite};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SourceText {
    pub file_name: String,
    pub content: String,
}

impl SourceText {
    pub fn new(file_name: impl Into<String>, content: impl Into<String>) -> Self {
        SourceText { file_name: file_name.into(), content: content.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DiagCode {
    LexError,
    ParseError,
    UnresolvedName,
    ArityMismatch,
    DuplicateName,
    UnknownType,
}

impl DiagCode {
    pub fn as_str(&self) -> &'static str {
        match self {
            DiagCode::LexError => "LexError",
            DiagCode::ParseError => "ParseError",
            DiagCode::UnresolvedName => "UnresolvedName",
            DiagCode::ArityMismatch => "ArityMismatch",
            DiagCode::DuplicateName => "DuplicateName",
            DiagCode::UnknownType => "UnknownType",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "LexError" => DiagCode::LexError,
            "ParseError" => DiagCode::ParseError,
            "UnresolvedName" => DiagCode::UnresolvedName,
            "ArityMismatch" => DiagCode::ArityMismatch,
            "DuplicateName" => DiagCode::DuplicateName,
            "UnknownType" => DiagCode::UnknownType,
            _ => return None,
        })
    }
}

impl fmt::Display for DiagCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Diagnostic {
    pub span: Span,
    pub code: DiagCode,
    pub message: String,
}

impl Diagnostic {
    pub fn new(span: Span, code: DiagCode, message: impl Into<String>) -> Self {
        Diagnostic { span, code, message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BuildStatus {
    Buildable { ast: AstNode, bindings: BindingTable },
    Unbuildable { diagnostics: Vec<Diagnostic> },
}

impl BuildStatus {
    pub fn is_buildable(&self) -> bool {
        matches!(self, BuildStatus::Buildable { .. })
    }

    pub fn diagnostics(&self) -> &[Diagnostic] {
        match self {
            BuildStatus::Buildable { .. } => &[],
            BuildStatus::Unbuildable { diagnostics } => diagnostics,
        }
    }
}

/// Name resolution for a set of files (parse + project-wide resolve).
#[derive(Debug, Clone, Default)]
pub struct ProjectAnalysis {
    /// Trees of the files that parsed.
    pub asts: BTreeMap<String, AstNode>,
    pub bindings: BindingTable,
    pub diagnostics: BTreeMap<String, Vec<Diagnostic>>,
}

impl ProjectAnalysis {
    pub fn is_buildable(&self) -> bool {
        self.diagnostics.values().all(|d| d.is_empty())
    }

    pub fn file_buildable(&self, file: &str) -> bool {
        self.diagnostics.get(file).is_some_and(|d| d.is_empty())
    }
}

pub fn analyze<'a>(files: impl IntoIterator<Item = &'a SourceText>) -> ProjectAnalysis {
    let mut files: Vec<&SourceText> = files.into_iter().collect();
    files.sort_by(|a, b| a.file_name.cmp(&b.file_name));
    let mut analysis = ProjectAnalysis::default();
    for f in &files {
        let (ast, diags) = parse(f);
        if let Some(ast) = ast {
            analysis.asts.insert(f.file_name.clone(), ast);
        }
        analysis.diagnostics.insert(f.file_name.clone(), diags);
    }
    let parsed: Vec<(&str, &AstNode)> = analysis.asts.iter().map(|(k, v)| (k.as_str(), v)).collect();
    let (bindings, resolve_diags) = resolve::resolve_project(&parsed);
    for (file, diags) in resolve_diags {
        analysis.diagnostics.entry(file).or_default().extend(diags);
    }
    analysis.bindings = bindings;
    analysis
}

/// Resolves a single parsed tree on its own (a one-file project).
pub fn resolve(file_name: &str, ast: &AstNode) -> (BindingTable, Vec<Diagnostic>) {
    let (bindings, mut diags) = resolve::resolve_project(&[(file_name, ast)]);
    (bindings, diags.remove(file_name).unwrap_or_default())
}

/// Classifies every file of a project. Resolution is project-wide.
pub fn check_buildable<'a>(files: impl IntoIterator<Item = &'a SourceText>) -> BTreeMap<String, BuildStatus> {
    let analysis = analyze(files);
    analysis
        .diagnostics
        .iter()
        .map(|(file, diags)| {
            let status = if diags.is_empty() {
                BuildStatus::Buildable { ast: analysis.asts[file].clone(), bindings: analysis.bindings.for_file(file) }
            } else {
                BuildStatus::Unbuildable { diagnostics: diags.clone() }
            };
            (file.clone(), status)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Part {
    Header,
    Body,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElementHit {
    pub path: ElementPath,
    pub part: Part,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ToylangError {
    #[error("offset {offset} is outside the program (length {len})")]
    OffsetOutsideProgram { offset: usize, len: usize },
}

/// Innermost named element whose span contains `offset`, or `None` when the
/// offset falls in top-level whitespace.
pub fn element_at(ast: &AstNode, offset: usize) -> Result<Option<ElementHit>, ToylangError> {
    if offset > ast.span.end {
        return Err(ToylangError::OffsetOutsideProgram { offset, len: ast.span.end });
    }
    let Some(class) = ast.classes().find(|c| c.span.contains_offset(offset)) else {
        return Ok(None);
    };
    let cname = class.name_text().expect("class has a name");
    for m in &class.children {
        if m.span.contains_offset(offset) {
            let in_header = m.header.is_some_and(|h| h.contains_offset(offset));
            let part = if in_header || m.kind == NodeKind::Field { Part::Header } else { Part::Body };
            return Ok(Some(ElementHit {
                path: ElementPath::member(cname, m.name_text().expect("member has a name")),
                part,
            }));
        }
    }
    let part = if class.header.is_some_and(|h| h.contains_offset(offset)) { Part::Header } else { Part::Body };
    Ok(Some(ElementHit { path: ElementPath::class(cname), part }))
}

/// 1-based line and column of a byte offset.
pub fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let upto = &text[..offset.min(text.len())];
    let line = upto.matches('\n').count() + 1;
    let col = upto.rfind('\n').map_or(upto.len(), |nl| upto.len() - nl - 1) + 1;
    (line, col)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn project(files: &[(&str, &str)]) -> Vec<SourceText> {
        files.iter().map(|(n, t)| SourceText::new(*n, *t)).collect()
    }

    fn codes(status: &BuildStatus) -> Vec<DiagCode> {
        status.diagnostics().iter().map(|d| d.code).collect()
    }

    #[test]
    fn typo_in_parameter_type_is_flagged_at_in() {
        let text = "class A { int Foo(in newParam, int x) { return x; } }";
        let st = check_buildable(&project(&[("f.toy", text)]));
        let diags = st["f.toy"].diagnostics();
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].code, DiagCode::UnknownType);
        assert_eq!(&text[diags[0].span.start..diags[0].span.end], "in");
    }

    #[test]
    fn rename_breaks_caller() {
        let text = "class A { int Foo1(int x) { return x; } int UsingFoo() { return Foo(1); } }";
        let (ast, _) = parse(&SourceText::new("f.toy", text));
        let (_, diags) = resolve("f.toy", &ast.unwrap());
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].code, DiagCode::UnresolvedName);
        assert_eq!(&text[diags[0].span.start..diags[0].span.end], "Foo");
    }

    #[test]
    fn self_contained_method_has_no_bindings() {
        let (ast, _) = parse(&SourceText::new("f.toy", "class A { int Foo() { return 1 + 2; } }"));
        let (bindings, diags) = resolve("f.toy", &ast.unwrap());
        assert!(bindings.is_empty());
        assert!(diags.is_empty());
    }

    // Oracle: arity by hand-counting formals vs actuals in each fixture.
    #[test]
    fn arity_fixtures() {
        let cases = [
            ("class A { int Foo(int x) { return x; } int B() { return Foo(1, 2); } }", true),
            ("class A { int Foo(int x) { return x; } int B() { return Foo(); } }", true),
            ("class A { int Foo(int x) { return x; } int B() { return Foo(1); } }", false),
            ("class A { int Foo() { return 0; } int B() { return Foo(); } }", false),
            ("class A { int Foo(int x, bool y) { return x; } int B() { return Foo(1, true); } }", false),
        ];
        for (text, mismatch) in cases {
            let st = check_buildable(&project(&[("f.toy", text)]));
            assert_eq!(codes(&st["f.toy"]) == vec![DiagCode::ArityMismatch], mismatch, "{text}");
        }
    }

    #[test]
    fn cross_file_resolution() {
        let files = project(&[
            ("file1.toy", "class A { int Foo(int x) { return x; } }"),
            ("file2.toy", "class B { int UsingFoo() { return Foo(1); } }"),
        ]);
        let st = check_buildable(&files);
        assert!(st.values().all(|s| s.is_buildable()));
        let BuildStatus::Buildable { bindings, .. } = &st["file2.toy"] else { panic!() };
        let b = bindings.iter().next().unwrap().1;
        assert_eq!(b.target.element, Some(ElementPath::member("A", "Foo")));
        assert_eq!(b.target.file, "file1.toy");
        assert_eq!(b.enclosing, Some(ElementPath::member("B", "UsingFoo")));

        let renamed = project(&[
            ("file1.toy", "class A { int Foo1(int x) { return x; } }"),
            ("file2.toy", "class B { int UsingFoo() { return Foo(1); } }"),
        ]);
        let st = check_buildable(&renamed);
        assert!(st["file1.toy"].is_buildable());
        assert_eq!(codes(&st["file2.toy"]), vec![DiagCode::UnresolvedName]);
    }

    #[test]
    fn no_files_no_verdicts() {
        assert!(check_buildable(&[]).is_empty());
    }

    #[test]
    fn duplicates_and_types() {
        let st = check_buildable(&project(&[(
            "f.toy",
            "class A { int x; bool x; C c; void f(int p, int p) { int q; int q; } }",
        )]));
        assert_eq!(
            codes(&st["f.toy"]),
            vec![DiagCode::DuplicateName, DiagCode::UnknownType, DiagCode::DuplicateName, DiagCode::DuplicateName]
        );
        let st = check_buildable(&project(&[("a.toy", "class A { }"), ("b.toy", "class A { }")]));
        assert!(st["a.toy"].is_buildable());
        assert_eq!(codes(&st["b.toy"]), vec![DiagCode::DuplicateName]);
    }

    #[test]
    fn ambiguous_unqualified_call() {
        let files = project(&[
            ("a.toy", "class A { int m() { return 1; } }"),
            ("b.toy", "class B { int m() { return 2; } }"),
            ("c.toy", "class C { int k() { return m(); } }"),
        ]);
        let st = check_buildable(&files);
        assert_eq!(codes(&st["c.toy"]), vec![DiagCode::UnresolvedName]);
        // The enclosing class wins over the project-wide index.
        let files = project(&[
            ("a.toy", "class A { int m() { return 1; } int k() { return m(); } }"),
            ("b.toy", "class B { int m() { return 2; } }"),
        ]);
        assert!(check_buildable(&files).values().all(|s| s.is_buildable()));
    }

    #[test]
    fn locals_shadow_fields_and_are_ordered() {
        let st = check_buildable(&project(&[(
            "f.toy",
            "class A { int x; int f() { int y = x; int x = y; return x; } int g() { return y; } }",
        )]));
        let diags = st["f.toy"].diagnostics();
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].code, DiagCode::UnresolvedName);
    }

    #[test]
    fn methods_are_not_values() {
        let st =
            check_buildable(&project(&[("f.toy", "class A { int f() { return f; } int x; int g() { return x(); } }")]));
        assert_eq!(codes(&st["f.toy"]), vec![DiagCode::UnresolvedName, DiagCode::UnresolvedName]);
    }

    #[test]
    fn element_at_classification() {
        let text = "class A { int Foo(int x) { return x; } int y; }";
        let (ast, _) = parse(&SourceText::new("f.toy", text));
        let ast = ast.unwrap();
        let hit = |o| element_at(&ast, o).unwrap();
        let foo = ElementPath::member("A", "Foo");
        // inside the identifier "Foo"
        assert_eq!(hit(15), Some(ElementHit { path: foo.clone(), part: Part::Header }));
        // right after "Foo", before '('
        assert_eq!(hit(17), Some(ElementHit { path: foo.clone(), part: Part::Header }));
        // inside the return statement
        assert_eq!(hit(30), Some(ElementHit { path: foo.clone(), part: Part::Body }));
        assert_eq!(hit(0), Some(ElementHit { path: ElementPath::class("A"), part: Part::Header }));
        // whitespace between members
        assert_eq!(hit(38), Some(ElementHit { path: ElementPath::class("A"), part: Part::Body }));
        assert_eq!(hit(41), Some(ElementHit { path: ElementPath::member("A", "y"), part: Part::Header }));
        assert_eq!(hit(text.len()), None);
        assert_eq!(
            element_at(&ast, text.len() + 1),
            Err(ToylangError::OffsetOutsideProgram { offset: text.len() + 1, len: text.len() })
        );
    }

    #[test]
    fn line_col_is_one_based() {
        assert_eq!(line_col("ab\ncd", 0), (1, 1));
        assert_eq!(line_col("ab\ncd", 4), (2, 2));
    }
}
