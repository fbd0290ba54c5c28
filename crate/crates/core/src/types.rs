//! Shared vocabulary: process identifiers, tags, values, operation ids,
//! protocol messages and the system configuration.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The role a process plays in the emulation.
///
/// Declaration order fixes the role-major ordering of [`ProcessId`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Writer,
    Reader,
    Server,
}

/// Identifier of a writer, reader or server. Indices are 1-based, so
/// `w1`, `r1`, `s1` are the first process of each role. Serialized in
/// that short string form.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProcessId {
    pub role: Role,
    pub index: u32,
}

impl ProcessId {
    pub const fn new(role: Role, index: u32) -> Self {
        ProcessId { role, index }
    }

    pub const fn writer(index: u32) -> Self {
        Self::new(Role::Writer, index)
    }

    pub const fn reader(index: u32) -> Self {
        Self::new(Role::Reader, index)
    }

    pub const fn server(index: u32) -> Self {
        Self::new(Role::Server, index)
    }

    pub fn is_server(&self) -> bool {
        self.role == Role::Server
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prefix = match self.role {
            Role::Writer => 'w',
            Role::Reader => 'r',
            Role::Server => 's',
        };
        write!(f, "{}{}", prefix, self.index)
    }
}

impl Serialize for ProcessId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ProcessId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid process id `{0}` (expected w<N>, r<N> or s<N>)")]
pub struct ParseProcessIdError(String);

impl FromStr for ProcessId {
    type Err = ParseProcessIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseProcessIdError(s.to_string());
        let mut chars = s.chars();
        let role = match chars.next() {
            Some('w') => Role::Writer,
            Some('r') => Role::Reader,
            Some('s') => Role::Server,
            _ => return Err(err()),
        };
        let index = chars.as_str().parse::<u32>().map_err(|_| err())?;
        Ok(ProcessId::new(role, index))
    }
}

/// Version number of a written value: a `(ts, wid)` pair compared
/// lexicographically. In single-writer mode `wid` is always the sole writer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Tag {
    pub ts: u64,
    pub wid: ProcessId,
}

impl Tag {
    /// Writer index 0 is never assigned to a real writer, so the initial
    /// tag cannot collide with any tag produced by a write.
    pub const INITIAL_WID: ProcessId = ProcessId::writer(0);

    pub const fn new(ts: u64, wid: ProcessId) -> Self {
        Tag { ts, wid }
    }

    /// The tag associated with the initial value ⊥.
    pub const fn initial() -> Self {
        Tag::new(0, Self::INITIAL_WID)
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.ts, self.wid)
    }
}

/// Strict lexicographic order on tags.
pub fn tag_less(a: &Tag, b: &Tag) -> bool {
    a.cmp(b) == Ordering::Less
}

/// A register value. Written values are opaque bytes paired with the
/// writer and a per-writer nonce, which keeps every written value distinct.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Value {
    /// The initial value ⊥; distinct from every written value.
    Bottom,
    Data {
        #[serde(with = "hex_bytes")]
        bytes: Vec<u8>,
        writer: ProcessId,
        nonce: u64,
    },
}

impl Value {
    pub fn data(bytes: impl Into<Vec<u8>>, writer: ProcessId, nonce: u64) -> Self {
        Value::Data {
            bytes: bytes.into(),
            writer,
            nonce,
        }
    }

    pub fn is_bottom(&self) -> bool {
        matches!(self, Value::Bottom)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bottom => f.write_str("⊥"),
            Value::Data { bytes, writer, nonce } => match std::str::from_utf8(bytes) {
                Ok(s) => write!(f, "{s:?}@{writer}#{nonce}"),
                Err(_) => write!(f, "0x{}@{writer}#{nonce}", hex::encode(bytes)),
            },
        }
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

/// A value together with the tag it was written under.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaggedValue {
    pub tag: Tag,
    pub value: Value,
}

impl TaggedValue {
    pub fn new(tag: Tag, value: Value) -> Self {
        TaggedValue { tag, value }
    }

    pub fn initial() -> Self {
        TaggedValue::new(Tag::initial(), Value::Bottom)
    }
}

/// Operation identifier: the invoking client plus its local operation
/// counter (`read_op` / `write_op`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OpId {
    pub invoker: ProcessId,
    pub seq: u64,
}

impl OpId {
    pub const fn new(invoker: ProcessId, seq: u64) -> Self {
        OpId { invoker, seq }
    }
}

impl fmt::Display for OpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.invoker, self.seq)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum MessageKind {
    ReadRequest,
    ReadRelay,
    ReadAck,
    WriteRequest,
    WriteAck,
    Discover,
    DiscoverAck,
    /// Server-to-server relay of a write; only the unsound three-exchange
    /// write protocol uses it.
    WriteRelay,
}

impl MessageKind {
    pub const ALL: [MessageKind; 8] = [
        MessageKind::ReadRequest,
        MessageKind::ReadRelay,
        MessageKind::ReadAck,
        MessageKind::WriteRequest,
        MessageKind::WriteAck,
        MessageKind::Discover,
        MessageKind::DiscoverAck,
        MessageKind::WriteRelay,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MessageKind::ReadRequest => "readRequest",
            MessageKind::ReadRelay => "readRelay",
            MessageKind::ReadAck => "readAck",
            MessageKind::WriteRequest => "writeRequest",
            MessageKind::WriteAck => "writeAck",
            MessageKind::Discover => "discover",
            MessageKind::DiscoverAck => "discoverAck",
            MessageKind::WriteRelay => "writeRelay",
        }
    }

    /// Kinds sent by servers to the invoking client.
    pub fn is_reply(&self) -> bool {
        matches!(
            self,
            MessageKind::ReadAck | MessageKind::WriteAck | MessageKind::DiscoverAck
        )
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MessageKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MessageKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown message kind `{s}`"))
    }
}

/// One write as seen by a server of the three-exchange write protocol:
/// carried in its relays so that receivers learn the relayer's local
/// receipt order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObservedWrite {
    pub op: OpId,
    pub value: Value,
}

/// A point-to-point protocol message. Broadcasts are expanded into one
/// message per destination before they leave the sender.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub kind: MessageKind,
    pub op: OpId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<Tag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Value>,
    pub sender: ProcessId,
    /// Set on relays: the server whose relay this is.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relay_origin: Option<ProcessId>,
    pub destination: ProcessId,
    /// The relayer's write receipt order (three-exchange write protocol only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed: Option<Vec<ObservedWrite>>,
}

impl Message {
    /// A message without payload (`readRequest`, `discover`).
    pub fn bare(kind: MessageKind, op: OpId, sender: ProcessId, destination: ProcessId) -> Self {
        Message {
            kind,
            op,
            tag: None,
            value: None,
            sender,
            relay_origin: None,
            destination,
            observed: None,
        }
    }

    pub fn with_payload(
        kind: MessageKind,
        op: OpId,
        payload: &TaggedValue,
        sender: ProcessId,
        destination: ProcessId,
    ) -> Self {
        Message {
            tag: Some(payload.tag),
            value: Some(payload.value.clone()),
            ..Message::bare(kind, op, sender, destination)
        }
    }

    /// The `(tag, value)` payload, if the message carries one.
    pub fn payload(&self) -> Option<TaggedValue> {
        match (&self.tag, &self.value) {
            (Some(tag), Some(value)) => Some(TaggedValue::new(*tag, value.clone())),
            _ => None,
        }
    }
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}->{} op={}", self.kind, self.sender, self.destination, self.op)?;
        if let Some(tag) = &self.tag {
            write!(f, " tag={tag}")?;
        }
        if let Some(origin) = &self.relay_origin {
            write!(f, " origin={origin}")?;
        }
        Ok(())
    }
}

/// Expand a broadcast into one message per destination.
pub fn broadcast<'a>(
    destinations: impl IntoIterator<Item = &'a ProcessId>,
    template: impl Fn(ProcessId) -> Message,
) -> Vec<Message> {
    destinations.into_iter().map(|d| template(*d)).collect()
}

/// Majority quorum: ⌊n/2⌋ + 1.
pub fn quorum_size(n_servers: usize) -> usize {
    n_servers / 2 + 1
}

/// Register model: one writer or many.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Swmr,
    Mwmr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Config {
    pub n_servers: usize,
    pub n_readers: usize,
    pub n_writers: usize,
    /// Maximum number of server crashes tolerated.
    pub f: usize,
}

impl Config {
    pub fn new(n_servers: usize, n_readers: usize, n_writers: usize, f: usize) -> Self {
        Config {
            n_servers,
            n_readers,
            n_writers,
            f,
        }
    }

    pub fn servers(&self) -> Vec<ProcessId> {
        (1..=self.n_servers as u32).map(ProcessId::server).collect()
    }

    pub fn readers(&self) -> Vec<ProcessId> {
        (1..=self.n_readers as u32).map(ProcessId::reader).collect()
    }

    pub fn writers(&self) -> Vec<ProcessId> {
        (1..=self.n_writers as u32).map(ProcessId::writer).collect()
    }

    pub fn quorum(&self) -> usize {
        quorum_size(self.n_servers)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("fault bound f={f} must be below half of {n_servers} servers")]
    InvalidFaultBound { f: usize, n_servers: usize },
    #[error("single-writer mode requires exactly one writer, got {n_writers}")]
    ModeMismatch { n_writers: usize },
    #[error("configuration needs at least one {0}")]
    EmptyRole(Role),
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Writer => "writer",
            Role::Reader => "reader",
            Role::Server => "server",
        })
    }
}

pub fn validate_config(config: &Config, mode: Mode) -> Result<(), ConfigError> {
    if config.n_servers == 0 {
        return Err(ConfigError::EmptyRole(Role::Server));
    }
    // f < n/2  <=>  2f < n
    if 2 * config.f >= config.n_servers {
        return Err(ConfigError::InvalidFaultBound {
            f: config.f,
            n_servers: config.n_servers,
        });
    }
    match mode {
        Mode::Swmr if config.n_writers != 1 => Err(ConfigError::ModeMismatch {
            n_writers: config.n_writers,
        }),
        Mode::Mwmr if config.n_writers == 0 => Err(ConfigError::EmptyRole(Role::Writer)),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tag_order_examples() {
        let w1 = ProcessId::writer(1);
        let w2 = ProcessId::writer(2);
        assert!(tag_less(&Tag::new(2, w1), &Tag::new(3, w1)));
        assert!(tag_less(&Tag::new(2, w1), &Tag::new(2, w2)));
        assert!(!tag_less(&Tag::new(3, w1), &Tag::new(2, w2)));
        assert!(tag_less(&Tag::initial(), &Tag::new(1, w1)));
    }

    #[test]
    fn quorum_examples() {
        assert_eq!(quorum_size(5), 3);
        assert_eq!(quorum_size(3), 2);
        assert_eq!(quorum_size(4), 3);
        assert_eq!(quorum_size(1), 1);
    }

    #[test]
    fn config_validation() {
        assert_eq!(validate_config(&Config::new(5, 1, 1, 2), Mode::Swmr), Ok(()));
        assert_eq!(
            validate_config(&Config::new(4, 1, 1, 2), Mode::Swmr),
            Err(ConfigError::InvalidFaultBound { f: 2, n_servers: 4 })
        );
        assert_eq!(
            validate_config(&Config::new(5, 1, 2, 1), Mode::Swmr),
            Err(ConfigError::ModeMismatch { n_writers: 2 })
        );
        assert_eq!(validate_config(&Config::new(5, 1, 2, 1), Mode::Mwmr), Ok(()));
        assert_eq!(
            validate_config(&Config::new(0, 1, 1, 0), Mode::Mwmr),
            Err(ConfigError::EmptyRole(Role::Server))
        );
    }

    #[test]
    fn process_ids_order_role_major() {
        assert!(ProcessId::writer(9) < ProcessId::reader(1));
        assert!(ProcessId::reader(9) < ProcessId::server(1));
        assert_eq!("s12".parse::<ProcessId>().unwrap(), ProcessId::server(12));
        assert!("x1".parse::<ProcessId>().is_err());
        assert_eq!(ProcessId::writer(3).to_string(), "w3");
    }

    #[test]
    fn message_json_field_names() {
        let m = Message {
            relay_origin: Some(ProcessId::server(2)),
            ..Message::with_payload(
                MessageKind::ReadRelay,
                OpId::new(ProcessId::reader(1), 4),
                &TaggedValue::new(Tag::new(3, ProcessId::writer(1)), Value::data("a", ProcessId::writer(1), 3)),
                ProcessId::server(2),
                ProcessId::server(1),
            )
        };
        let json: serde_json::Value = serde_json::to_value(&m).unwrap();
        let obj = json.as_object().unwrap();
        let mut keys: Vec<_> = obj.keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            ["destination", "kind", "op", "relay_origin", "sender", "tag", "value"]
        );
        assert_eq!(obj["kind"], "readRelay");
        assert_eq!(obj["value"]["bytes"], "61");

        // unknown fields are ignored
        let mut extended = json.clone();
        extended["future_field"] = serde_json::json!(17);
        let back: Message = serde_json::from_value(extended).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn bottom_is_distinct_from_written_values() {
        assert_ne!(Value::Bottom, Value::data("", ProcessId::writer(1), 0));
        let json = serde_json::to_string(&Value::Bottom).unwrap();
        assert_eq!(json, r#"{"kind":"bottom"}"#);
    }

    fn arb_tag() -> impl Strategy<Value = Tag> {
        (0u64..6, 0u32..4).prop_map(|(ts, w)| Tag::new(ts, ProcessId::writer(w)))
    }

    proptest! {
        #[test]
        fn tag_less_is_strict_total_order(a in arb_tag(), b in arb_tag(), c in arb_tag()) {
            prop_assert!(!tag_less(&a, &a));
            if tag_less(&a, &b) {
                prop_assert!(!tag_less(&b, &a));
            }
            if tag_less(&a, &b) && tag_less(&b, &c) {
                prop_assert!(tag_less(&a, &c));
            }
            if a != b {
                prop_assert!(tag_less(&a, &b) ^ tag_less(&b, &a));
            }
        }

        #[test]
        fn quorums_intersect(n in 1usize..200) {
            prop_assert!(quorum_size(n) > n - quorum_size(n));
            prop_assert!(2 * quorum_size(n) > n);
        }

        #[test]
        fn message_json_roundtrip(ts in 0u64..100, seq in 0u64..100, bytes in proptest::collection::vec(any::<u8>(), 0..8)) {
            let w = ProcessId::writer(1);
            let m = Message::with_payload(
                MessageKind::WriteRequest,
                OpId::new(w, seq),
                &TaggedValue::new(Tag::new(ts, w), Value::data(bytes, w, seq)),
                w,
                ProcessId::server(3),
            );
            let s = serde_json::to_string(&m).unwrap();
            prop_assert_eq!(serde_json::from_str::<Message>(&s).unwrap(), m);
        }
    }
}
