//! Wire messages: newline-delimited JSON with sorted keys.
//!
//! Every frame is an envelope `{body, seq, session, type, v}`. Encoding is
//! canonical, so a given message always produces the same bytes.

use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::lockmgr::LockKind;

pub const PROTOCOL_VERSION: u64 = 1;

pub const MESSAGE_TYPES: [&str; 15] = [
    "hello",
    "welcome",
    "edit_intent",
    "lock_grant",
    "lock_deny",
    "commit",
    "commit_ack",
    "commit_reject",
    "propagate",
    "unlock_notice",
    "off_record",
    "on_record",
    "reconcile_report",
    "error",
    "bye",
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementInfo {
    pub id: u64,
    pub path: String,
    pub span: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSnapshot {
    pub file_name: String,
    pub version: u64,
    pub text: String,
    pub elements: Vec<ElementInfo>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalFile {
    pub file_name: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireEditClass {
    Header,
    Body,
    NewMember,
    NewReference,
    Release,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Unbuildable,
    Stale,
    LockViolation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictKind {
    BothChanged,
    DeletedUpstream,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticInfo {
    pub file_name: String,
    pub span: [usize; 2],
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Conflict {
    pub file_name: String,
    pub element_path: String,
    pub kind: ConflictKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hello {
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Welcome {
    pub session: String,
    pub files: Vec<FileSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditIntent {
    pub file_name: String,
    pub base_version: u64,
    /// Element to lock; for `new_member` the parent class path, or empty
    /// for a new top-level class.
    pub target_path: String,
    pub edit_class: WireEditClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub referent_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub release_lock_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LockGrant {
    pub lock_id: u64,
    pub elements: Vec<String>,
    pub kind: LockKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LockDeny {
    pub holder_name: String,
    pub elements: Vec<String>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Commit {
    pub file_name: String,
    pub base_version: u64,
    pub text: String,
    /// Set on every commit of a multi-file batch except the last.
    #[serde(default, skip_serializing_if = "is_false")]
    pub more: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommitAck {
    pub file_name: String,
    pub version: u64,
    /// Element table of the committed text, so the author learns the ids of
    /// elements it introduced.
    pub elements: Vec<ElementInfo>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommitReject {
    pub file_name: String,
    pub reason: RejectReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Vec<DiagnosticInfo>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Propagate {
    pub file_name: String,
    pub version: u64,
    pub text: String,
    pub author: String,
    pub elements: Vec<ElementInfo>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnlockNotice {
    pub elements: Vec<String>,
    pub holder_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Empty {}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnRecord {
    pub files: Vec<LocalFile>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconcileReport {
    pub conflicts: Vec<Conflict>,
    pub base_version_map: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Body {
    Hello(Hello),
    Welcome(Welcome),
    EditIntent(EditIntent),
    LockGrant(LockGrant),
    LockDeny(LockDeny),
    Commit(Commit),
    CommitAck(CommitAck),
    CommitReject(CommitReject),
    Propagate(Propagate),
    UnlockNotice(UnlockNotice),
    OffRecord,
    OnRecord(OnRecord),
    ReconcileReport(ReconcileReport),
    Error(ErrorBody),
    Bye,
}

impl Body {
    pub fn type_name(&self) -> &'static str {
        match self {
            Body::Hello(_) => "hello",
            Body::Welcome(_) => "welcome",
            Body::EditIntent(_) => "edit_intent",
            Body::LockGrant(_) => "lock_grant",
            Body::LockDeny(_) => "lock_deny",
            Body::Commit(_) => "commit",
            Body::CommitAck(_) => "commit_ack",
            Body::CommitReject(_) => "commit_reject",
            Body::Propagate(_) => "propagate",
            Body::UnlockNotice(_) => "unlock_notice",
            Body::OffRecord => "off_record",
            Body::OnRecord(_) => "on_record",
            Body::ReconcileReport(_) => "reconcile_report",
            Body::Error(_) => "error",
            Body::Bye => "bye",
        }
    }

    fn to_value(&self) -> Value {
        let v = match self {
            Body::Hello(b) => serde_json::to_value(b),
            Body::Welcome(b) => serde_json::to_value(b),
            Body::EditIntent(b) => serde_json::to_value(b),
            Body::LockGrant(b) => serde_json::to_value(b),
            Body::LockDeny(b) => serde_json::to_value(b),
            Body::Commit(b) => serde_json::to_value(b),
            Body::CommitAck(b) => serde_json::to_value(b),
            Body::CommitReject(b) => serde_json::to_value(b),
            Body::Propagate(b) => serde_json::to_value(b),
            Body::UnlockNotice(b) => serde_json::to_value(b),
            Body::OffRecord | Body::Bye => serde_json::to_value(Empty {}),
            Body::OnRecord(b) => serde_json::to_value(b),
            Body::ReconcileReport(b) => serde_json::to_value(b),
            Body::Error(b) => serde_json::to_value(b),
        };
        v.expect("message bodies always serialize")
    }

    fn from_value(ty: &str, v: Value) -> Result<Body, ProtocolError> {
        fn de<T: DeserializeOwned>(v: Value) -> Result<T, ProtocolError> {
            serde_json::from_value(v).map_err(|e| ProtocolError::SchemaViolation(e.to_string()))
        }
        Ok(match ty {
            "hello" => Body::Hello(de(v)?),
            "welcome" => Body::Welcome(de(v)?),
            "edit_intent" => Body::EditIntent(de(v)?),
            "lock_grant" => Body::LockGrant(de(v)?),
            "lock_deny" => Body::LockDeny(de(v)?),
            "commit" => Body::Commit(de(v)?),
            "commit_ack" => Body::CommitAck(de(v)?),
            "commit_reject" => Body::CommitReject(de(v)?),
            "propagate" => Body::Propagate(de(v)?),
            "unlock_notice" => Body::UnlockNotice(de(v)?),
            "off_record" => {
                de::<Empty>(v)?;
                Body::OffRecord
            }
            "on_record" => Body::OnRecord(de(v)?),
            "reconcile_report" => Body::ReconcileReport(de(v)?),
            "error" => Body::Error(de(v)?),
            "bye" => {
                de::<Empty>(v)?;
                Body::Bye
            }
            other => return Err(ProtocolError::SchemaViolation(format!("unknown message type {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub seq: u64,
    pub session: String,
    pub body: Body,
}

impl Message {
    pub fn new(seq: u64, session: impl Into<String>, body: Body) -> Self {
        Message { seq, session: session.into(), body }
    }

    pub fn type_name(&self) -> &'static str {
        self.body.type_name()
    }
}

/// One canonical line, newline included.
pub fn encode(msg: &Message) -> Result<String, ProtocolError> {
    if msg.seq == 0 {
        return Err(ProtocolError::SchemaViolation("seq must be positive".into()));
    }
    let mut env = serde_json::Map::new();
    env.insert("body".into(), msg.body.to_value());
    env.insert("seq".into(), Value::from(msg.seq));
    env.insert("session".into(), Value::from(msg.session.clone()));
    env.insert("type".into(), Value::from(msg.type_name()));
    env.insert("v".into(), Value::from(PROTOCOL_VERSION));
    let mut line = serde_json::to_string(&Value::Object(env)).expect("json values serialize");
    line.push('\n');
    Ok(line)
}

pub fn decode(line: &[u8]) -> Result<Message, ProtocolError> {
    let line = line.strip_suffix(b"\n").unwrap_or(line);
    let value: Value = serde_json::from_slice(line).map_err(|e| ProtocolError::MalformedFrame(e.to_string()))?;
    let Value::Object(mut env) = value else {
        return Err(ProtocolError::MalformedFrame("frame is not a JSON object".into()));
    };
    match env.get("v") {
        Some(v) if v.as_u64() == Some(PROTOCOL_VERSION) => {}
        Some(v) if v.is_u64() || v.is_i64() => return Err(ProtocolError::UnsupportedVersion(v.to_string())),
        Some(v) => return Err(ProtocolError::SchemaViolation(format!("bad version field {v}"))),
        None => return Err(ProtocolError::SchemaViolation("missing field `v`".into())),
    }
    for key in env.keys() {
        if !matches!(key.as_str(), "body" | "seq" | "session" | "type" | "v") {
            return Err(ProtocolError::SchemaViolation(format!("unknown field `{key}`")));
        }
    }
    let mut take =
        |k: &str| env.remove(k).ok_or_else(|| ProtocolError::SchemaViolation(format!("missing field `{k}`")));
    let ty = take("type")?;
    let seq = take("seq")?;
    let session = take("session")?;
    let body = take("body")?;
    let ty = ty.as_str().ok_or_else(|| ProtocolError::SchemaViolation("`type` must be a string".into()))?;
    let seq = seq
        .as_u64()
        .filter(|s| *s > 0)
        .ok_or_else(|| ProtocolError::SchemaViolation("`seq` must be a positive integer".into()))?;
    let Value::String(session) = session else {
        return Err(ProtocolError::SchemaViolation("`session` must be a string".into()));
    };
    let body = Body::from_value(ty, body)?;
    Ok(Message { seq, session, body })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hello() -> Message {
        Message::new(1, "", Body::Hello(Hello { name: "bob".into() }))
    }

    #[test]
    fn minimal_hello_is_canonical() {
        assert_eq!(
            encode(&hello()).unwrap(),
            "{\"body\":{\"name\":\"bob\"},\"seq\":1,\"session\":\"\",\"type\":\"hello\",\"v\":1}\n"
        );
        assert_eq!(decode(encode(&hello()).unwrap().as_bytes()).unwrap(), hello());
    }

    #[test]
    fn lock_deny_line() {
        let m = Message::new(
            4,
            "s2",
            Body::LockDeny(LockDeny {
                holder_name: "bob".into(),
                elements: vec!["A/Foo".into()],
                reason: "locked".into(),
            }),
        );
        let line = encode(&m).unwrap();
        assert!(line.contains("\"type\":\"lock_deny\""));
        assert!(
            line.contains("\"holder_name\":\"bob\"")
                && line.contains("\"elements\":[\"A/Foo\"]")
                && line.contains("\"reason\"")
        );
        assert_eq!(decode(line.as_bytes()).unwrap(), m);
    }

    #[test]
    fn version_gate_and_errors() {
        let v2 = "{\"body\":{\"name\":\"bob\"},\"seq\":1,\"session\":\"\",\"type\":\"hello\",\"v\":2}";
        assert!(matches!(decode(v2.as_bytes()), Err(ProtocolError::UnsupportedVersion(_))));
        let full = encode(&hello()).unwrap();
        assert!(matches!(decode(&full.as_bytes()[..20]), Err(ProtocolError::MalformedFrame(_))));
        let unknown = full.replace("hello", "howdy");
        assert!(matches!(decode(unknown.as_bytes()), Err(ProtocolError::SchemaViolation(_))));
        let extra = full.replace("\"name\":\"bob\"", "\"name\":\"bob\",\"x\":1");
        assert!(matches!(decode(extra.as_bytes()), Err(ProtocolError::SchemaViolation(_))));
        let missing = full.replace("\"seq\":1,", "");
        assert!(matches!(decode(missing.as_bytes()), Err(ProtocolError::SchemaViolation(_))));
        let bad_type = full.replace("\"seq\":1", "\"seq\":\"1\"");
        assert!(matches!(decode(bad_type.as_bytes()), Err(ProtocolError::SchemaViolation(_))));
        assert!(matches!(encode(&Message::new(0, "", Body::Bye)), Err(ProtocolError::SchemaViolation(_))));
        let bad_class = "{\"body\":{\"base_version\":0,\"edit_class\":\"sideways\",\"file_name\":\"f\",\"target_path\":\"A\"},\"seq\":1,\"session\":\"s1\",\"type\":\"edit_intent\",\"v\":1}";
        assert!(matches!(decode(bad_class.as_bytes()), Err(ProtocolError::SchemaViolation(_))));
    }

    #[test]
    fn closed_type_set() {
        assert!(Body::from_value("bye", Value::Object(Default::default())).is_ok());
        assert_eq!(MESSAGE_TYPES.len(), 15);
        for m in sample_messages() {
            assert!(MESSAGE_TYPES.contains(&m.type_name()));
        }
        let covered: std::collections::BTreeSet<&str> = sample_messages().iter().map(|m| m.type_name()).collect();
        assert_eq!(covered.len(), 15);
    }

    pub(crate) fn sample_messages() -> Vec<Message> {
        let el = ElementInfo { id: 3, path: "A/Foo".into(), span: [10, 38] };
        vec![
            hello(),
            Message::new(
                1,
                "s1",
                Body::Welcome(Welcome {
                    session: "s1".into(),
                    files: vec![FileSnapshot {
                        file_name: "f.toy".into(),
                        version: 0,
                        text: "class A { }".into(),
                        elements: vec![el.clone()],
                    }],
                }),
            ),
            Message::new(
                2,
                "s1",
                Body::EditIntent(EditIntent {
                    file_name: "f.toy".into(),
                    base_version: 0,
                    target_path: "A/Foo".into(),
                    edit_class: WireEditClass::NewReference,
                    referent_path: Some("B/Bar".into()),
                    release_lock_id: None,
                }),
            ),
            Message::new(
                3,
                "s1",
                Body::LockGrant(LockGrant {
                    lock_id: 1,
                    elements: vec!["A/Foo".into(), "A/+4".into()],
                    kind: LockKind::Defining,
                }),
            ),
            Message::new(
                4,
                "s1",
                Body::LockDeny(LockDeny { holder_name: "bob".into(), elements: vec![], reason: "locked".into() }),
            ),
            Message::new(
                5,
                "s1",
                Body::Commit(Commit {
                    file_name: "f.toy".into(),
                    base_version: 3,
                    text: "x\n\"y\"\u{e9}".into(),
                    more: true,
                }),
            ),
            Message::new(
                6,
                "s1",
                Body::CommitAck(CommitAck { file_name: "f.toy".into(), version: 4, elements: vec![] }),
            ),
            Message::new(
                7,
                "s1",
                Body::CommitReject(CommitReject {
                    file_name: "f.toy".into(),
                    reason: RejectReason::Unbuildable,
                    diagnostics: Some(vec![DiagnosticInfo {
                        file_name: "f.toy".into(),
                        span: [1, 2],
                        code: "ParseError".into(),
                        message: "m".into(),
                    }]),
                }),
            ),
            Message::new(
                8,
                "s2",
                Body::Propagate(Propagate {
                    file_name: "f.toy".into(),
                    version: 1,
                    text: "t".into(),
                    author: "bob".into(),
                    elements: vec![el],
                }),
            ),
            Message::new(
                9,
                "s2",
                Body::UnlockNotice(UnlockNotice { elements: vec!["A/Foo".into()], holder_name: "bob".into() }),
            ),
            Message::new(10, "s2", Body::OffRecord),
            Message::new(
                11,
                "s2",
                Body::OnRecord(OnRecord { files: vec![LocalFile { file_name: "f.toy".into(), text: "".into() }] }),
            ),
            Message::new(
                12,
                "s2",
                Body::ReconcileReport(ReconcileReport {
                    conflicts: vec![Conflict {
                        file_name: "f.toy".into(),
                        element_path: "A/Foo".into(),
                        kind: ConflictKind::BothChanged,
                    }],
                    base_version_map: BTreeMap::from([("f.toy".into(), 2)]),
                }),
            ),
            Message::new(13, "s2", Body::Error(ErrorBody { code: "bad_seq".into(), message: "x".into() })),
            Message::new(14, "s2", Body::Bye),
        ]
    }

    #[test]
    fn every_type_round_trips() {
        for m in sample_messages() {
            let line = encode(&m).unwrap();
            assert!(line.ends_with('\n') && !line[..line.len() - 1].contains('\n'));
            let back = decode(line.as_bytes()).unwrap();
            assert_eq!(back, m);
            assert_eq!(encode(&back).unwrap(), line);
        }
    }

    proptest! {
        #[test]
        fn commit_round_trip(seq in 1u64..u64::MAX, text in ".*", file in "[a-z]{1,8}\\.toy", base in 0u64..1000, more in any::<bool>()) {
            let m = Message::new(seq, "s1", Body::Commit(Commit { file_name: file, base_version: base, text, more }));
            let line = encode(&m).unwrap();
            prop_assert_eq!(decode(line.as_bytes()).unwrap(), m);
        }

        #[test]
        fn mutated_lines_never_panic(idx in 0usize..15, pos in any::<prop::sample::Index>(), byte in any::<u8>(), cut in any::<bool>()) {
            let mut bytes = encode(&sample_messages()[idx]).unwrap().into_bytes();
            let p = pos.index(bytes.len());
            if cut { bytes.truncate(p) } else { bytes[p] = byte }
            let _ = decode(&bytes);
        }
    }
}
