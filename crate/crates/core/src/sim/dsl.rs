//! Line-oriented scenario language.
//!
//! ```text
//! client bob
//! file f.toy "class A { }"
//! at 1 bob insert f.toy 10 "int x; " expect apply
//! at 2 assert converged f.toy
//! ```

use std::fmt::{self, Write as _};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expect {
    Apply,
    Deny,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Insert {
        client: String,
        file: String,
        offset: usize,
        text: String,
        expect: Option<Expect>,
    },
    Delete {
        client: String,
        file: String,
        offset: usize,
        len: usize,
        expect: Option<Expect>,
    },
    Revert {
        client: String,
        file: String,
    },
    OffRecord {
        client: String,
    },
    OnRecord {
        client: String,
    },
    AssertBuildable {
        client: String,
        file: String,
        value: bool,
    },
    AssertText {
        client: String,
        file: String,
        text: String,
    },
    /// `holder` of `None` means nobody.
    AssertLocked {
        file: String,
        path: String,
        holder: Option<String>,
    },
    AssertConverged {
        file: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub tick: u64,
    pub action: Action,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Scenario {
    pub clients: Vec<String>,
    pub files: Vec<(String, String)>,
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ScenarioSyntaxError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Word(String),
    Str(String),
}

fn tokenize(line: &str) -> Result<Vec<Tok>, String> {
    let mut out = Vec::new();
    let mut chars = line.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c == '#' {
            break;
        } else if c == '"' {
            chars.next();
            let mut s = String::new();
            loop {
                match chars.next() {
                    None => return Err("unterminated string".into()),
                    Some('"') => break,
                    Some('\\') => match chars.next() {
                        Some('"') => s.push('"'),
                        Some('\\') => s.push('\\'),
                        Some('n') => s.push('\n'),
                        Some(other) => return Err(format!("unknown escape \\{other}")),
                        None => return Err("unterminated string".into()),
                    },
                    Some(ch) => s.push(ch),
                }
            }
            out.push(Tok::Str(s));
        } else {
            let mut w = String::new();
            while let Some(&ch) = chars.peek() {
                if ch.is_whitespace() || ch == '"' || ch == '#' {
                    break;
                }
                w.push(ch);
                chars.next();
            }
            out.push(Tok::Word(w));
        }
    }
    Ok(out)
}

struct Cursor {
    toks: std::vec::IntoIter<Tok>,
}

impl Cursor {
    fn word(&mut self, what: &str) -> Result<String, String> {
        match self.toks.next() {
            Some(Tok::Word(w)) => Ok(w),
            Some(Tok::Str(_)) => Err(format!("expected {what}, found a string")),
            None => Err(format!("expected {what}")),
        }
    }

    fn string(&mut self, what: &str) -> Result<String, String> {
        match self.toks.next() {
            Some(Tok::Str(s)) => Ok(s),
            _ => Err(format!("expected quoted {what}")),
        }
    }

    fn number<T: std::str::FromStr>(&mut self, what: &str) -> Result<T, String> {
        let w = self.word(what)?;
        w.parse().map_err(|_| format!("expected {what}, found {w:?}"))
    }

    fn keyword(&mut self, kw: &str) -> Result<(), String> {
        let w = self.word(kw)?;
        if w == kw {
            Ok(())
        } else {
            Err(format!("expected {kw:?}, found {w:?}"))
        }
    }

    fn expect(&mut self) -> Result<Option<Expect>, String> {
        match self.toks.next() {
            None => Ok(None),
            Some(Tok::Word(w)) if w == "expect" => match self.word("apply or deny")?.as_str() {
                "apply" => Ok(Some(Expect::Apply)),
                "deny" => Ok(Some(Expect::Deny)),
                other => Err(format!("expected apply or deny, found {other:?}")),
            },
            Some(_) => Err("expected end of line or expect".into()),
        }
    }

    fn end(&mut self) -> Result<(), String> {
        match self.toks.next() {
            None => Ok(()),
            Some(_) => Err("unexpected trailing input".into()),
        }
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioSyntaxError> {
    let mut sc = Scenario::default();
    let mut last_tick = 0;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |message: String| ScenarioSyntaxError { line: line_no, message };
        let toks = tokenize(line).map_err(err)?;
        if toks.is_empty() {
            continue;
        }
        let mut c = Cursor { toks: toks.into_iter() };
        let head = c.word("statement").map_err(err)?;
        match head.as_str() {
            "client" => {
                let name = c.word("client name").map_err(err)?;
                c.end().map_err(err)?;
                if sc.clients.contains(&name) {
                    return Err(err(format!("client {name} declared twice")));
                }
                sc.clients.push(name);
            }
            "file" => {
                let name = c.word("file name").map_err(err)?;
                let text = c.string("file text").map_err(err)?;
                c.end().map_err(err)?;
                if sc.files.iter().any(|(n, _)| *n == name) {
                    return Err(err(format!("file {name} declared twice")));
                }
                sc.files.push((name, text));
            }
            "at" => {
                let tick: u64 = c.number("tick").map_err(err)?;
                if tick < last_tick {
                    return Err(err(format!("tick {tick} is before tick {last_tick}")));
                }
                last_tick = tick;
                let action = parse_action(&mut c).map_err(err)?;
                let known = |n: &str| sc.clients.iter().any(|c| c == n);
                if let Some(client) = action_client(&action) {
                    if !known(client) {
                        return Err(err(format!("unknown client {client}")));
                    }
                }
                sc.events.push(Event { tick, action });
            }
            other => return Err(err(format!("unknown statement {other:?}"))),
        }
    }
    Ok(sc)
}

fn action_client(a: &Action) -> Option<&str> {
    match a {
        Action::Insert { client, .. }
        | Action::Delete { client, .. }
        | Action::Revert { client, .. }
        | Action::OffRecord { client }
        | Action::OnRecord { client }
        | Action::AssertBuildable { client, .. }
        | Action::AssertText { client, .. } => Some(client),
        Action::AssertLocked { holder, .. } => holder.as_deref(),
        Action::AssertConverged { .. } => None,
    }
}

fn parse_action(c: &mut Cursor) -> Result<Action, String> {
    let who = c.word("client or assert")?;
    if who == "assert" {
        let what = c.word("assertion")?;
        let a = match what.as_str() {
            "buildable" => {
                let client = c.word("client")?;
                let file = c.word("file name")?;
                let value = match c.word("true or false")?.as_str() {
                    "true" => true,
                    "false" => false,
                    other => return Err(format!("expected true or false, found {other:?}")),
                };
                Action::AssertBuildable { client, file, value }
            }
            "text" => {
                let client = c.word("client")?;
                let file = c.word("file name")?;
                let text = c.string("text")?;
                Action::AssertText { client, file, text }
            }
            "locked" => {
                let file = c.word("file name")?;
                let path = c.word("element path")?;
                c.keyword("by")?;
                let h = c.word("client or nobody")?;
                Action::AssertLocked { file, path, holder: (h != "nobody").then_some(h) }
            }
            "converged" => Action::AssertConverged { file: c.word("file name")? },
            other => return Err(format!("unknown assertion {other:?}")),
        };
        c.end()?;
        return Ok(a);
    }
    let client = who;
    let verb = c.word("action")?;
    let a = match verb.as_str() {
        "insert" => {
            let file = c.word("file name")?;
            let offset = c.number("byte offset")?;
            let text = c.string("text")?;
            let expect = c.expect()?;
            Action::Insert { client, file, offset, text, expect }
        }
        "delete" => {
            let file = c.word("file name")?;
            let offset = c.number("byte offset")?;
            let len = c.number("length")?;
            let expect = c.expect()?;
            Action::Delete { client, file, offset, len, expect }
        }
        "revert" => Action::Revert { client, file: c.word("file name")? },
        "offrecord" => Action::OffRecord { client },
        "onrecord" => Action::OnRecord { client },
        other => return Err(format!("unknown action {other:?}")),
    };
    c.end()?;
    Ok(a)
}

pub(crate) fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            _ => out.push(ch),
        }
    }
    out.push('"');
    out
}

fn expect_suffix(e: &Option<Expect>) -> &'static str {
    match e {
        None => "",
        Some(Expect::Apply) => " expect apply",
        Some(Expect::Deny) => " expect deny",
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Insert { client, file, offset, text, expect } => {
                write!(f, "{client} insert {file} {offset} {}{}", quote(text), expect_suffix(expect))
            }
            Action::Delete { client, file, offset, len, expect } => {
                write!(f, "{client} delete {file} {offset} {len}{}", expect_suffix(expect))
            }
            Action::Revert { client, file } => write!(f, "{client} revert {file}"),
            Action::OffRecord { client } => write!(f, "{client} offrecord"),
            Action::OnRecord { client } => write!(f, "{client} onrecord"),
            Action::AssertBuildable { client, file, value } => write!(f, "assert buildable {client} {file} {value}"),
            Action::AssertText { client, file, text } => write!(f, "assert text {client} {file} {}", quote(text)),
            Action::AssertLocked { file, path, holder } => {
                write!(f, "assert locked {file} {path} by {}", holder.as_deref().unwrap_or("nobody"))
            }
            Action::AssertConverged { file } => write!(f, "assert converged {file}"),
        }
    }
}

impl Scenario {
    /// Renders the scenario back into the DSL; parsing the result yields an
    /// equal scenario.
    pub fn to_dsl(&self) -> String {
        let mut out = String::new();
        for c in &self.clients {
            let _ = writeln!(out, "client {c}");
        }
        for (name, text) in &self.files {
            let _ = writeln!(out, "file {name} {}", quote(text));
        }
        for e in &self.events {
            let _ = writeln!(out, "at {} {}", e.tick, e.action);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_statement() {
        let text = r#"
# comment
client bob
client john
file f.toy "class A { int Foo() { return 1; } }"   # trailing
at 1 bob insert f.toy 3 "a \"q\" \\" expect apply
at 1 bob delete f.toy 3 2 expect deny
at 2 john revert f.toy
at 2 john offrecord
at 3 john onrecord
at 3 assert buildable bob f.toy true
at 3 assert text bob f.toy "x"
at 4 assert locked f.toy A/Foo by nobody
at 4 assert locked f.toy A/Foo by bob
at 4 assert converged f.toy
"#;
        let sc = parse_scenario(text).unwrap();
        assert_eq!(sc.clients, ["bob", "john"]);
        assert_eq!(sc.files.len(), 1);
        assert_eq!(sc.events.len(), 10);
        match &sc.events[0].action {
            Action::Insert { text, expect, .. } => {
                assert_eq!(text, "a \"q\" \\");
                assert_eq!(*expect, Some(Expect::Apply));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(parse_scenario(&sc.to_dsl()).unwrap(), sc);
    }

    #[test]
    fn empty_file_is_empty_scenario() {
        assert_eq!(parse_scenario("").unwrap(), Scenario::default());
    }

    #[test]
    fn errors_name_the_line() {
        let e = parse_scenario("client bob\n\nat 1 bob insrt f 0 \"x\"\n").unwrap_err();
        assert_eq!(e.line, 3);
        assert!(e.to_string().starts_with("line 3:"));
        assert_eq!(parse_scenario("clint bob").unwrap_err().line, 1);
        assert_eq!(parse_scenario("client a\nat 2 a offrecord\nat 1 a onrecord").unwrap_err().line, 3);
        assert_eq!(parse_scenario("file f \"abc").unwrap_err().line, 1);
        assert_eq!(parse_scenario("at 1 ghost offrecord").unwrap_err().line, 1);
    }
}
