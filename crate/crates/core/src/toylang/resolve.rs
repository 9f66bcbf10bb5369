use std::collections::{BTreeMap, HashMap};

use super::ast::{AstNode, ElementPath, Ident, NodeKind, Span, TypeName};
use super::{DiagCode, Diagnostic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DeclKind {
    Class,
    Field,
    Method,
    Param,
    VarDecl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RefKind {
    /// Class name used as a type.
    Type,
    /// Variable read or assignment target.
    Value,
    /// Callee of a call expression.
    Call,
}

/// Location of one reference: the identifier span in a given file.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RefSite {
    pub file: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DeclTarget {
    pub kind: DeclKind,
    pub file: String,
    /// Span of the declaring node.
    pub span: Span,
    /// Set for Class/Field/Method declarations.
    pub element: Option<ElementPath>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Binding {
    pub kind: RefKind,
    pub name: String,
    /// Innermost named element (Class/Field/Method) containing the reference.
    pub enclosing: Option<ElementPath>,
    pub target: DeclTarget,
}

/// Every resolved reference of a project, keyed by site.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BindingTable {
    pub entries: BTreeMap<RefSite, Binding>,
}

impl BindingTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn for_file(&self, file: &str) -> BindingTable {
        BindingTable {
            entries: self
                .entries
                .iter()
                .filter(|(site, _)| site.file == file)
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&RefSite, &Binding)> {
        self.entries.iter()
    }
}

struct MemberInfo<'a> {
    file: &'a str,
    class: &'a str,
    node: &'a AstNode,
}

/// Resolves every reference in a set of parsed files. Diagnostics are
/// returned per file; files are visited in the order given.
pub fn resolve_project<'a>(files: &[(&'a str, &'a AstNode)]) -> (BindingTable, BTreeMap<String, Vec<Diagnostic>>) {
    let mut diags: BTreeMap<String, Vec<Diagnostic>> = BTreeMap::new();
    for (file, _) in files {
        diags.entry(file.to_string()).or_default();
    }

    // Classes, first declaration wins.
    let mut classes: HashMap<&str, (&str, &AstNode)> = HashMap::new();
    for &(file, ast) in files {
        for class in ast.classes() {
            let name = class.name.as_ref().expect("class has a name");
            if classes.contains_key(name.text.as_str()) {
                push(&mut diags, file, name.span, DiagCode::DuplicateName, format!("duplicate class '{}'", name.text));
            } else {
                classes.insert(&name.text, (file, class));
            }
        }
    }

    // Members per class and a project-wide index for unqualified lookups.
    let mut members: HashMap<(&str, &str), MemberInfo> = HashMap::new();
    let mut methods_by_name: HashMap<&str, Vec<(&str, &str)>> = HashMap::new();
    let mut fields_by_name: HashMap<&str, Vec<(&str, &str)>> = HashMap::new();
    for &(file, ast) in files {
        for class in ast.classes() {
            let cname = class.name_text().expect("class has a name");
            if !std::ptr::eq(classes[cname].1, class) {
                continue;
            }
            for m in &class.children {
                let mname = m.name.as_ref().expect("member has a name");
                if members.contains_key(&(cname, mname.text.as_str())) {
                    push(
                        &mut diags,
                        file,
                        mname.span,
                        DiagCode::DuplicateName,
                        format!("duplicate member '{}' in class '{cname}'", mname.text),
                    );
                    continue;
                }
                members.insert((cname, &mname.text), MemberInfo { file, class: cname, node: m });
                let index = if m.kind == NodeKind::Method { &mut methods_by_name } else { &mut fields_by_name };
                index.entry(&mname.text).or_default().push((cname, &mname.text));
            }
        }
    }

    let mut r = Resolver {
        classes: &classes,
        members: &members,
        methods_by_name: &methods_by_name,
        fields_by_name: &fields_by_name,
        bindings: BindingTable::default(),
        diags,
    };

    for &(file, ast) in files {
        for class in ast.classes() {
            let cname = class.name_text().expect("class has a name");
            for m in &class.children {
                let path = ElementPath::member(cname, m.name_text().expect("member has a name"));
                r.resolve_type(file, m.ty.as_ref(), &path);
                if m.kind == NodeKind::Method {
                    r.resolve_method(file, cname, m, &path);
                }
            }
        }
    }

    for list in r.diags.values_mut() {
        list.sort_by(|a, b| (a.span, a.code, &a.message).cmp(&(b.span, b.code, &b.message)));
    }
    (r.bindings, r.diags)
}

fn push(diags: &mut BTreeMap<String, Vec<Diagnostic>>, file: &str, span: Span, code: DiagCode, msg: String) {
    diags.entry(file.to_string()).or_default().push(Diagnostic::new(span, code, msg));
}

struct Local<'a> {
    name: &'a str,
    kind: DeclKind,
    span: Span,
}

struct Resolver<'r, 'a> {
    classes: &'r HashMap<&'a str, (&'a str, &'a AstNode)>,
    members: &'r HashMap<(&'a str, &'a str), MemberInfo<'a>>,
    methods_by_name: &'r HashMap<&'a str, Vec<(&'a str, &'a str)>>,
    fields_by_name: &'r HashMap<&'a str, Vec<(&'a str, &'a str)>>,
    bindings: BindingTable,
    diags: BTreeMap<String, Vec<Diagnostic>>,
}

enum Lookup {
    /// Declaration target and, for methods, the number of parameters.
    Found(DeclTarget, usize),
    Missing,
    Ambiguous,
}

impl<'r, 'a> Resolver<'r, 'a> {
    fn bind(&mut self, file: &str, site: &Ident, kind: RefKind, enclosing: &ElementPath, target: DeclTarget) {
        self.bindings.entries.insert(
            RefSite { file: file.to_string(), span: site.span },
            Binding { kind, name: site.text.clone(), enclosing: Some(enclosing.clone()), target },
        );
    }

    fn member_target(info: &MemberInfo) -> DeclTarget {
        let kind = if info.node.kind == NodeKind::Method { DeclKind::Method } else { DeclKind::Field };
        DeclTarget {
            kind,
            file: info.file.to_string(),
            span: info.node.span,
            element: Some(ElementPath::member(info.class, info.node.name_text().expect("named"))),
        }
    }

    fn resolve_type(&mut self, file: &str, ty: Option<&TypeName>, enclosing: &ElementPath) {
        let Some(TypeName::Class(id)) = ty else { return };
        match self.classes.get(id.text.as_str()) {
            Some(&(cfile, cnode)) => {
                let target = DeclTarget {
                    kind: DeclKind::Class,
                    file: cfile.to_string(),
                    span: cnode.span,
                    element: Some(ElementPath::class(id.text.clone())),
                };
                self.bind(file, id, RefKind::Type, enclosing, target);
            }
            None => push(&mut self.diags, file, id.span, DiagCode::UnknownType, format!("unknown type '{}'", id.text)),
        }
    }

    /// Enclosing class first, then a unique match anywhere in the project.
    fn lookup_member(&self, class: &str, name: &str, want_method: bool) -> Lookup {
        let found = |info: &MemberInfo| {
            let arity = info.node.children.iter().filter(|c| c.kind == NodeKind::Param).count();
            Lookup::Found(Self::member_target(info), arity)
        };
        if let Some(info) = self.members.get(&(class, name)) {
            return if (info.node.kind == NodeKind::Method) == want_method { found(info) } else { Lookup::Missing };
        }
        let index = if want_method { self.methods_by_name } else { self.fields_by_name };
        match index.get(name).map(|v| v.as_slice()) {
            Some([(c, m)]) => found(&self.members[&(*c, *m)]),
            Some([_, _, ..]) => Lookup::Ambiguous,
            _ => Lookup::Missing,
        }
    }

    fn resolve_method(&mut self, file: &str, class: &str, method: &'a AstNode, path: &ElementPath) {
        let mut scope: Vec<Local<'a>> = Vec::new();
        for p in method.children.iter().filter(|c| c.kind == NodeKind::Param) {
            self.resolve_type(file, p.ty.as_ref(), path);
            let name = p.name.as_ref().expect("param has a name");
            if scope.iter().any(|l| l.name == name.text) {
                push(
                    &mut self.diags,
                    file,
                    name.span,
                    DiagCode::DuplicateName,
                    format!("duplicate parameter '{}'", name.text),
                );
            }
            scope.push(Local { name: &name.text, kind: DeclKind::Param, span: p.span });
        }
        let Some(block) = method.children.last().filter(|c| c.kind == NodeKind::Block) else { return };
        for stmt in &block.children {
            match stmt.kind {
                NodeKind::VarDecl => {
                    self.resolve_type(file, stmt.ty.as_ref(), path);
                    for e in &stmt.children {
                        self.resolve_expr(file, class, path, &scope, e);
                    }
                    let name = stmt.name.as_ref().expect("local has a name");
                    if scope.iter().any(|l| l.name == name.text) {
                        push(
                            &mut self.diags,
                            file,
                            name.span,
                            DiagCode::DuplicateName,
                            format!("duplicate local '{}'", name.text),
                        );
                    }
                    scope.push(Local { name: &name.text, kind: DeclKind::VarDecl, span: stmt.span });
                }
                NodeKind::Assign => {
                    let target = stmt.name.as_ref().expect("assign has a target");
                    self.resolve_value(file, class, path, &scope, target);
                    for e in &stmt.children {
                        self.resolve_expr(file, class, path, &scope, e);
                    }
                }
                _ => {
                    for e in &stmt.children {
                        self.resolve_expr(file, class, path, &scope, e);
                    }
                }
            }
        }
    }

    fn resolve_value(&mut self, file: &str, class: &str, path: &ElementPath, scope: &[Local], id: &Ident) {
        if let Some(local) = scope.iter().rev().find(|l| l.name == id.text) {
            let target = DeclTarget { kind: local.kind, file: file.to_string(), span: local.span, element: None };
            self.bind(file, id, RefKind::Value, path, target);
            return;
        }
        match self.lookup_member(class, &id.text, false) {
            Lookup::Found(target, _) => {
                self.bind(file, id, RefKind::Value, path, target);
            }
            Lookup::Missing => {
                push(&mut self.diags, file, id.span, DiagCode::UnresolvedName, format!("cannot find '{}'", id.text))
            }
            Lookup::Ambiguous => push(
                &mut self.diags,
                file,
                id.span,
                DiagCode::UnresolvedName,
                format!("ambiguous reference to '{}'", id.text),
            ),
        }
    }

    fn resolve_expr(&mut self, file: &str, class: &str, path: &ElementPath, scope: &[Local], e: &AstNode) {
        match e.kind {
            NodeKind::NameRef => {
                let id = e.name.as_ref().expect("nameref has a name");
                self.resolve_value(file, class, path, scope, id);
            }
            NodeKind::Call => {
                let id = e.name.as_ref().expect("call has a callee");
                match self.lookup_member(class, &id.text, true) {
                    Lookup::Found(target, formals) => {
                        let actuals = e.children.len();
                        if formals != actuals {
                            push(
                                &mut self.diags,
                                file,
                                e.span,
                                DiagCode::ArityMismatch,
                                format!("'{}' takes {formals} argument(s) but {actuals} were given", id.text),
                            );
                        }
                        self.bind(file, id, RefKind::Call, path, target);
                    }
                    Lookup::Missing => push(
                        &mut self.diags,
                        file,
                        id.span,
                        DiagCode::UnresolvedName,
                        format!("cannot find method '{}'", id.text),
                    ),
                    Lookup::Ambiguous => push(
                        &mut self.diags,
                        file,
                        id.span,
                        DiagCode::UnresolvedName,
                        format!("ambiguous call to '{}'", id.text),
                    ),
                }
                for a in &e.children {
                    self.resolve_expr(file, class, path, scope, a);
                }
            }
            _ => {
                for c in &e.children {
                    self.resolve_expr(file, class, path, scope, c);
                }
            }
        }
    }
}
