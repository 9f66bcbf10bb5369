use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Half-open byte range `[start, end)` into a source buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub const fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn contains_offset(&self, offset: usize) -> bool {
        self.start <= offset && offset < self.end
    }

    pub fn contains(&self, other: Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn overlaps(&self, other: Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn cover(self, other: Span) -> Span {
        Span::new(self.start.min(other.start), self.end.max(other.end))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Program,
    Class,
    Field,
    Method,
    Param,
    Block,
    VarDecl,
    Assign,
    ExprStmt,
    Return,
    Call,
    NameRef,
    Literal,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Ident {
    pub text: String,
    pub span: Span,
}

/// Declared type of a field, method, parameter or local.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TypeName {
    Int(Span),
    Bool(Span),
    Void(Span),
    Class(Ident),
}

impl TypeName {
    pub fn span(&self) -> Span {
        match self {
            TypeName::Int(s) | TypeName::Bool(s) | TypeName::Void(s) => *s,
            TypeName::Class(id) => id.span,
        }
    }

    pub fn text(&self) -> &str {
        match self {
            TypeName::Int(_) => "int",
            TypeName::Bool(_) => "bool",
            TypeName::Void(_) => "void",
            TypeName::Class(id) => &id.text,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AstNode {
    pub kind: NodeKind,
    pub span: Span,
    /// Declared name for Class/Field/Method/Param/VarDecl, callee for Call,
    /// target for Assign, the referenced identifier for NameRef.
    pub name: Option<Ident>,
    pub ty: Option<TypeName>,
    /// Source text of a Literal.
    pub literal: Option<String>,
    pub op: Option<BinOp>,
    /// Header region of a Class (`class X` up to the brace), Method (type
    /// through the closing parenthesis) or Field (the whole declaration).
    pub header: Option<Span>,
    pub children: Vec<AstNode>,
}

impl AstNode {
    pub fn new(kind: NodeKind, span: Span) -> Self {
        AstNode { kind, span, name: None, ty: None, literal: None, op: None, header: None, children: Vec::new() }
    }

    pub fn name_text(&self) -> Option<&str> {
        self.name.as_ref().map(|n| n.text.as_str())
    }

    /// Body region: the block of a method, or the braced part of a class.
    pub fn body(&self) -> Option<Span> {
        match self.kind {
            NodeKind::Method => self.children.last().filter(|c| c.kind == NodeKind::Block).map(|b| b.span),
            NodeKind::Class => self.header.map(|h| Span::new(h.end, self.span.end)),
            _ => None,
        }
    }

    pub fn classes(&self) -> impl Iterator<Item = &AstNode> {
        self.children.iter().filter(|c| c.kind == NodeKind::Class)
    }

    /// Pre-order traversal.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a AstNode)) {
        f(self);
        for c in &self.children {
            c.walk(f);
        }
    }

    /// Structural shape used for round-trip comparison: kinds, names and
    /// child order, ignoring spans.
    pub fn shape(&self) -> String {
        let mut out = String::new();
        self.shape_into(&mut out);
        out
    }

    fn shape_into(&self, out: &mut String) {
        out.push_str(&format!("{:?}", self.kind));
        if let Some(n) = &self.name {
            out.push(':');
            out.push_str(&n.text);
        }
        if let Some(t) = &self.ty {
            out.push_str(&format!("<{}>", t.text()));
        }
        if let Some(l) = &self.literal {
            out.push_str(&format!("={l}"));
        }
        if let Some(op) = self.op {
            out.push_str(&format!("[{op:?}]"));
        }
        if !self.children.is_empty() {
            out.push('(');
            for (i, c) in self.children.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                c.shape_into(out);
            }
            out.push(')');
        }
    }
}

/// Address of a lockable element: `Class` or `Class/member`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ElementPath {
    pub class: String,
    pub member: Option<String>,
}

impl ElementPath {
    pub fn class(name: impl Into<String>) -> Self {
        ElementPath { class: name.into(), member: None }
    }

    pub fn member(class: impl Into<String>, member: impl Into<String>) -> Self {
        ElementPath { class: class.into(), member: Some(member.into()) }
    }

    pub fn parent(&self) -> Option<ElementPath> {
        self.member.as_ref().map(|_| ElementPath::class(self.class.clone()))
    }

    pub fn is_class(&self) -> bool {
        self.member.is_none()
    }
}

impl fmt::Display for ElementPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.member {
            Some(m) => write!(f, "{}/{}", self.class, m),
            None => f.write_str(&self.class),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed element path {0:?}")]
pub struct BadElementPath(pub String);

impl FromStr for ElementPath {
    type Err = BadElementPath;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let valid = |p: &str| {
            let mut chars = p.chars();
            matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
                && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        };
        match s.split_once('/') {
            None if valid(s) => Ok(ElementPath::class(s)),
            Some((c, m)) if valid(c) && valid(m) => Ok(ElementPath::member(c, m)),
            _ => Err(BadElementPath(s.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn element_path_text_form() {
        assert_eq!("A".parse::<ElementPath>().unwrap(), ElementPath::class("A"));
        assert_eq!("A/Foo".parse::<ElementPath>().unwrap().to_string(), "A/Foo");
        assert!("A/".parse::<ElementPath>().is_err());
        assert!("A/B/C".parse::<ElementPath>().is_err());
        assert!("".parse::<ElementPath>().is_err());
        assert!("A/+3".parse::<ElementPath>().is_err());
    }

    #[test]
    fn span_relations() {
        let s = Span::new(2, 5);
        assert!(s.contains_offset(2) && !s.contains_offset(5));
        assert!(s.overlaps(Span::new(4, 9)) && !s.overlaps(Span::new(5, 9)));
        assert!(s.contains(Span::new(3, 5)));
    }
}
