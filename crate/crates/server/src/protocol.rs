//! Wire messages exchanged over `/session`.
//!
//! Every message is one JSON text frame:
//! `{"v":1,"type":..,"session_id":..,"seq":..,"body":{..}}`. Sketches inside
//! bodies use the canonical sketch record.

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use serde_json::Value;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Envelope {
    pub v: u32,
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default)]
    pub session_id: Option<String>,
    pub seq: u64,
    pub body: Box<RawValue>,
}

impl Envelope {
    pub fn new(kind: &str, session_id: Option<&str>, seq: u64, body: Box<RawValue>) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            kind: kind.to_string(),
            session_id: session_id.map(str::to_string),
            seq,
            body,
        }
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("envelope serialization is infallible")
    }

    pub fn body_value(&self) -> Value {
        serde_json::from_str(self.body.get()).unwrap_or(Value::Null)
    }
}

/// Server to client.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServerKind {
    StateUpdate,
    Frame,
    SketchProposal,
    Token,
    Outcome,
}

impl ServerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ServerKind::StateUpdate => "state_update",
            ServerKind::Frame => "frame",
            ServerKind::SketchProposal => "sketch_proposal",
            ServerKind::Token => "token",
            ServerKind::Outcome => "outcome",
        }
    }
}

/// Client to server.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClientKind {
    Start,
    Pause,
    Resume,
    Approve,
    EditSketch,
    InjectEvent,
}

impl ClientKind {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "start" => ClientKind::Start,
            "pause" => ClientKind::Pause,
            "resume" => ClientKind::Resume,
            "approve" => ClientKind::Approve,
            "edit_sketch" => ClientKind::EditSketch,
            "inject_event" => ClientKind::InjectEvent,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClientKind::Start => "start",
            ClientKind::Pause => "pause",
            ClientKind::Resume => "resume",
            ClientKind::Approve => "approve",
            ClientKind::EditSketch => "edit_sketch",
            ClientKind::InjectEvent => "inject_event",
        }
    }
}

/// Body of `start`. Either opens a new session (`task`, `seed`, `hitl_gate`)
/// or re-attaches to an existing one (`session_id`, `from_seq`).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StartBody {
    #[serde(default)]
    pub task: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub hitl_gate: bool,
    #[serde(default)]
    pub budget: Option<u64>,
    #[serde(default)]
    pub session_id: Option<String>,
    #[serde(default)]
    pub from_seq: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EditBody {
    /// Canonical sketch record, as an object or as its string form.
    pub sketch: Value,
    #[serde(default)]
    pub directive: Option<String>,
    #[serde(default)]
    pub editor: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InjectBody {
    pub kind: String,
    #[serde(default)]
    pub diagnostic: Option<String>,
    #[serde(default)]
    pub directive: Option<String>,
    #[serde(default)]
    pub sketch: Option<Value>,
}

pub fn raw<T: Serialize>(body: &T) -> Box<RawValue> {
    serde_json::value::to_raw_value(body).expect("message body serialization is infallible")
}

/// Rejection reply to a client message.
pub fn rejection(kind: &str, in_reply_to: u64, reason: &str, violations: Vec<String>) -> Box<RawValue> {
    #[derive(Serialize)]
    struct Rejected<'a> {
        rejected: &'a str,
        in_reply_to: u64,
        reason: &'a str,
        #[serde(skip_serializing_if = "Vec::is_empty")]
        violations: Vec<String>,
    }
    raw(&Rejected {
        rejected: kind,
        in_reply_to,
        reason,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_round_trip_keeps_body_bytes() {
        let body = RawValue::from_string(r#"{"frame":{"view":"ego","w":4,"h":4},"bbox":[]}"#.into()).unwrap();
        let e = Envelope::new("edit_sketch", Some("s1"), 3, body);
        let text = e.to_text();
        assert!(text.starts_with(r#"{"v":1,"type":"edit_sketch","session_id":"s1","seq":3,"body":{"frame""#));
        let back: Envelope = serde_json::from_str(&text).unwrap();
        assert_eq!(back.body.get(), e.body.get());
    }

    #[test]
    fn client_kinds_parse() {
        for k in ["start", "pause", "resume", "approve", "edit_sketch", "inject_event"] {
            assert_eq!(ClientKind::parse(k).unwrap().as_str(), k);
        }
        assert!(ClientKind::parse("token").is_none());
    }
}
