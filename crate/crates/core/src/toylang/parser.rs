use super::ast::{AstNode, BinOp, Ident, NodeKind, Span, TypeName};
use super::lexer::{lex, Token, TokenKind};
use super::{DiagCode, Diagnostic, SourceText};

/// Parses a whole file. There is no error recovery: the first syntax error
/// ends the parse and no tree is returned.
pub fn parse(text: &SourceText) -> (Option<AstNode>, Vec<Diagnostic>) {
    let (tokens, lex_errors) = lex(&text.content);
    if !lex_errors.is_empty() {
        return (None, lex_errors);
    }
    let mut p = Parser { tokens, pos: 0, len: text.content.len() };
    match p.program() {
        Ok(ast) => (Some(ast), Vec::new()),
        Err(d) => (None, vec![d]),
    }
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    len: usize,
}

type PResult<T> = Result<T, Diagnostic>;

impl Parser {
    fn peek(&self) -> Option<&TokenKind> {
        self.tokens.get(self.pos).map(|t| &t.kind)
    }

    fn peek_at(&self, n: usize) -> Option<&TokenKind> {
        self.tokens.get(self.pos + n).map(|t| &t.kind)
    }

    fn error_here(&self, expected: &str) -> Diagnostic {
        match self.tokens.get(self.pos) {
            Some(t) => Diagnostic::new(
                t.span,
                DiagCode::ParseError,
                format!("expected {expected}, found {}", t.kind.describe()),
            ),
            None => Diagnostic::new(
                Span::new(self.len, self.len),
                DiagCode::ParseError,
                format!("expected {expected}, found end of input"),
            ),
        }
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        self.pos += 1;
        t
    }

    fn expect(&mut self, kind: TokenKind) -> PResult<Span> {
        if self.peek() == Some(&kind) {
            Ok(self.bump().span)
        } else {
            Err(self.error_here(&kind.describe()))
        }
    }

    fn ident(&mut self) -> PResult<Ident> {
        match self.peek() {
            Some(TokenKind::Ident(_)) => {
                let t = self.bump();
                let TokenKind::Ident(text) = t.kind else { unreachable!() };
                Ok(Ident { text, span: t.span })
            }
            _ => Err(self.error_here("identifier")),
        }
    }

    fn program(&mut self) -> PResult<AstNode> {
        let mut prog = AstNode::new(NodeKind::Program, Span::new(0, self.len));
        while self.peek().is_some() {
            prog.children.push(self.class_decl()?);
        }
        Ok(prog)
    }

    fn class_decl(&mut self) -> PResult<AstNode> {
        let start = self.expect(TokenKind::KwClass)?;
        let name = self.ident()?;
        let lbrace = self.expect(TokenKind::LBrace)?;
        let mut members = Vec::new();
        while self.peek() != Some(&TokenKind::RBrace) {
            if self.peek().is_none() {
                return Err(self.error_here("'}'"));
            }
            members.push(self.member()?);
        }
        let rbrace = self.expect(TokenKind::RBrace)?;
        let mut node = AstNode::new(NodeKind::Class, start.cover(rbrace));
        node.name = Some(name);
        node.header = Some(Span::new(start.start, lbrace.start));
        node.children = members;
        Ok(node)
    }

    fn is_type_start(&self) -> bool {
        matches!(self.peek(), Some(TokenKind::KwInt | TokenKind::KwBool | TokenKind::KwVoid | TokenKind::Ident(_)))
    }

    fn type_name(&mut self) -> PResult<TypeName> {
        match self.peek() {
            Some(TokenKind::KwInt) => Ok(TypeName::Int(self.bump().span)),
            Some(TokenKind::KwBool) => Ok(TypeName::Bool(self.bump().span)),
            Some(TokenKind::KwVoid) => Ok(TypeName::Void(self.bump().span)),
            Some(TokenKind::Ident(_)) => Ok(TypeName::Class(self.ident()?)),
            _ => Err(self.error_here("type")),
        }
    }

    fn member(&mut self) -> PResult<AstNode> {
        if !self.is_type_start() {
            return Err(self.error_here("member declaration"));
        }
        let ty = self.type_name()?;
        let name = self.ident()?;
        match self.peek() {
            Some(TokenKind::Semi) => {
                let semi = self.bump().span;
                let span = ty.span().cover(semi);
                let mut node = AstNode::new(NodeKind::Field, span);
                node.header = Some(span);
                node.ty = Some(ty);
                node.name = Some(name);
                Ok(node)
            }
            Some(TokenKind::LParen) => {
                self.bump();
                let mut params = Vec::new();
                if self.peek() != Some(&TokenKind::RParen) {
                    loop {
                        params.push(self.param()?);
                        if self.peek() == Some(&TokenKind::Comma) {
                            self.bump();
                        } else {
                            break;
                        }
                    }
                }
                let rparen = self.expect(TokenKind::RParen)?;
                let block = self.block()?;
                let mut node = AstNode::new(NodeKind::Method, ty.span().cover(block.span));
                node.header = Some(ty.span().cover(rparen));
                node.ty = Some(ty);
                node.name = Some(name);
                node.children = params;
                node.children.push(block);
                Ok(node)
            }
            _ => Err(self.error_here("';' or '('")),
        }
    }

    fn param(&mut self) -> PResult<AstNode> {
        let ty = self.type_name()?;
        let name = self.ident()?;
        let mut node = AstNode::new(NodeKind::Param, ty.span().cover(name.span));
        node.ty = Some(ty);
        node.name = Some(name);
        Ok(node)
    }

    fn block(&mut self) -> PResult<AstNode> {
        let lbrace = self.expect(TokenKind::LBrace)?;
        let mut stmts = Vec::new();
        while self.peek() != Some(&TokenKind::RBrace) {
            if self.peek().is_none() {
                return Err(self.error_here("'}'"));
            }
            stmts.push(self.stmt()?);
        }
        let rbrace = self.expect(TokenKind::RBrace)?;
        let mut node = AstNode::new(NodeKind::Block, lbrace.cover(rbrace));
        node.children = stmts;
        Ok(node)
    }

    fn stmt(&mut self) -> PResult<AstNode> {
        match (self.peek(), self.peek_at(1)) {
            (Some(TokenKind::KwReturn), _) => {
                let kw = self.bump().span;
                let mut node = AstNode::new(NodeKind::Return, kw);
                if self.peek() != Some(&TokenKind::Semi) {
                    node.children.push(self.expr()?);
                }
                let semi = self.expect(TokenKind::Semi)?;
                node.span = kw.cover(semi);
                Ok(node)
            }
            (Some(TokenKind::KwInt | TokenKind::KwBool | TokenKind::KwVoid), _)
            | (Some(TokenKind::Ident(_)), Some(TokenKind::Ident(_))) => {
                let ty = self.type_name()?;
                let name = self.ident()?;
                let mut node = AstNode::new(NodeKind::VarDecl, ty.span());
                if self.peek() == Some(&TokenKind::Assign) {
                    self.bump();
                    node.children.push(self.expr()?);
                }
                let semi = self.expect(TokenKind::Semi)?;
                node.span = ty.span().cover(semi);
                node.ty = Some(ty);
                node.name = Some(name);
                Ok(node)
            }
            (Some(TokenKind::Ident(_)), Some(TokenKind::Assign)) => {
                let target = self.ident()?;
                self.bump();
                let value = self.expr()?;
                let semi = self.expect(TokenKind::Semi)?;
                let mut node = AstNode::new(NodeKind::Assign, target.span.cover(semi));
                node.name = Some(target);
                node.children.push(value);
                Ok(node)
            }
            _ => {
                let e = self.expr()?;
                let semi = self.expect(TokenKind::Semi)?;
                let mut node = AstNode::new(NodeKind::ExprStmt, e.span.cover(semi));
                node.children.push(e);
                Ok(node)
            }
        }
    }

    fn expr(&mut self) -> PResult<AstNode> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(TokenKind::Plus) => BinOp::Add,
                Some(TokenKind::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> PResult<AstNode> {
        let mut lhs = self.primary()?;
        loop {
            let op = match self.peek() {
                Some(TokenKind::Star) => BinOp::Mul,
                Some(TokenKind::Slash) => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.primary()?;
            lhs = binary(op, lhs, rhs);
        }
    }

    fn primary(&mut self) -> PResult<AstNode> {
        match self.peek() {
            Some(TokenKind::Int(_) | TokenKind::KwTrue | TokenKind::KwFalse) => {
                let t = self.bump();
                let text = match t.kind {
                    TokenKind::Int(s) => s,
                    TokenKind::KwTrue => "true".into(),
                    _ => "false".into(),
                };
                let mut node = AstNode::new(NodeKind::Literal, t.span);
                node.literal = Some(text);
                Ok(node)
            }
            Some(TokenKind::Ident(_)) => {
                let name = self.ident()?;
                if self.peek() == Some(&TokenKind::LParen) {
                    self.bump();
                    let mut args = Vec::new();
                    if self.peek() != Some(&TokenKind::RParen) {
                        loop {
                            args.push(self.expr()?);
                            if self.peek() == Some(&TokenKind::Comma) {
                                self.bump();
                            } else {
                                break;
                            }
                        }
                    }
                    let rparen = self.expect(TokenKind::RParen)?;
                    let mut node = AstNode::new(NodeKind::Call, name.span.cover(rparen));
                    node.name = Some(name);
                    node.children = args;
                    Ok(node)
                } else {
                    let mut node = AstNode::new(NodeKind::NameRef, name.span);
                    node.name = Some(name);
                    Ok(node)
                }
            }
            Some(TokenKind::LParen) => {
                self.bump();
                let inner = self.expr()?;
                self.expect(TokenKind::RParen)?;
                Ok(inner)
            }
            _ => Err(self.error_here("expression")),
        }
    }
}

fn binary(op: BinOp, lhs: AstNode, rhs: AstNode) -> AstNode {
    let mut node = AstNode::new(NodeKind::Binary, lhs.span.cover(rhs.span));
    node.op = Some(op);
    node.children = vec![lhs, rhs];
    node
}
