use super::ast::Span;
use super::{DiagCode, Diagnostic};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenKind {
    Ident(String),
    Int(String),
    KwClass,
    KwInt,
    KwBool,
    KwVoid,
    KwReturn,
    KwTrue,
    KwFalse,
    LBrace,
    RBrace,
    LParen,
    RParen,
    Semi,
    Comma,
    Assign,
    Plus,
    Minus,
    Star,
    Slash,
}

impl TokenKind {
    pub fn describe(&self) -> String {
        match self {
            TokenKind::Ident(s) => format!("identifier '{s}'"),
            TokenKind::Int(s) => format!("integer '{s}'"),
            TokenKind::KwClass => "'class'".into(),
            TokenKind::KwInt => "'int'".into(),
            TokenKind::KwBool => "'bool'".into(),
            TokenKind::KwVoid => "'void'".into(),
            TokenKind::KwReturn => "'return'".into(),
            TokenKind::KwTrue => "'true'".into(),
            TokenKind::KwFalse => "'false'".into(),
            TokenKind::LBrace => "'{'".into(),
            TokenKind::RBrace => "'}'".into(),
            TokenKind::LParen => "'('".into(),
            TokenKind::RParen => "')'".into(),
            TokenKind::Semi => "';'".into(),
            TokenKind::Comma => "','".into(),
            TokenKind::Assign => "'='".into(),
            TokenKind::Plus => "'+'".into(),
            TokenKind::Minus => "'-'".into(),
            TokenKind::Star => "'*'".into(),
            TokenKind::Slash => "'/'".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub span: Span,
}

fn keyword(word: &str) -> Option<TokenKind> {
    Some(match word {
        "class" => TokenKind::KwClass,
        "int" => TokenKind::KwInt,
        "bool" => TokenKind::KwBool,
        "void" => TokenKind::KwVoid,
        "return" => TokenKind::KwReturn,
        "true" => TokenKind::KwTrue,
        "false" => TokenKind::KwFalse,
        _ => return None,
    })
}

/// Splits `src` into tokens. Every unrecognised character produces a
/// `LexError`; the token stream is only meaningful when the error list is
/// empty.
pub fn lex(src: &str) -> (Vec<Token>, Vec<Diagnostic>) {
    let bytes = src.as_bytes();
    let mut tokens = Vec::new();
    let mut errors = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c == b'/' && bytes.get(i + 1) == Some(&b'/') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        if c.is_ascii_alphabetic() {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let word = &src[start..i];
            let kind = keyword(word).unwrap_or_else(|| TokenKind::Ident(word.to_string()));
            tokens.push(Token { kind, span: Span::new(start, i) });
            continue;
        }
        if c.is_ascii_digit() {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            tokens.push(Token { kind: TokenKind::Int(src[start..i].to_string()), span: Span::new(start, i) });
            continue;
        }
        let kind = match c {
            b'{' => Some(TokenKind::LBrace),
            b'}' => Some(TokenKind::RBrace),
            b'(' => Some(TokenKind::LParen),
            b')' => Some(TokenKind::RParen),
            b';' => Some(TokenKind::Semi),
            b',' => Some(TokenKind::Comma),
            b'=' => Some(TokenKind::Assign),
            b'+' => Some(TokenKind::Plus),
            b'-' => Some(TokenKind::Minus),
            b'*' => Some(TokenKind::Star),
            b'/' => Some(TokenKind::Slash),
            _ => None,
        };
        match kind {
            Some(kind) => {
                i += 1;
                tokens.push(Token { kind, span: Span::new(start, i) });
            }
            None => {
                // Skip the whole UTF-8 sequence so spans stay on char boundaries.
                let ch = src[start..].chars().next().expect("in bounds");
                i += ch.len_utf8();
                errors.push(Diagnostic::new(
                    Span::new(start, i),
                    DiagCode::LexError,
                    format!("unexpected character {ch:?}"),
                ));
            }
        }
    }
    (tokens, errors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keywords_and_identifiers() {
        let (toks, errs) = lex("class A1_b { int x; } // trailing");
        assert!(errs.is_empty());
        let kinds: Vec<_> = toks.iter().map(|t| t.kind.clone()).collect();
        assert_eq!(
            kinds,
            vec![
                TokenKind::KwClass,
                TokenKind::Ident("A1_b".into()),
                TokenKind::LBrace,
                TokenKind::KwInt,
                TokenKind::Ident("x".into()),
                TokenKind::Semi,
                TokenKind::RBrace,
            ]
        );
        assert_eq!(toks[1].span, Span::new(6, 10));
    }

    #[test]
    fn leading_underscore_is_a_lex_error() {
        let (_, errs) = lex("int _x;");
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].code, DiagCode::LexError);
        assert_eq!(errs[0].span, Span::new(4, 5));
    }

    #[test]
    fn multibyte_garbage_keeps_char_boundaries() {
        let (_, errs) = lex("a é b");
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].span, Span::new(2, 4));
    }
}
