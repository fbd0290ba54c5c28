//! Event-machine interface shared by every protocol. The simulator and the
//! TCP runner drive the same implementations through these traits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Message, OpId, ProcessId, Tag, TaggedValue, Value};

/// An operation a client is asked to perform.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Invocation {
    Read,
    Write { value: Value },
}

impl Invocation {
    pub fn is_read(&self) -> bool {
        matches!(self, Invocation::Read)
    }
}

/// Result of invoking an operation: its identifier and the messages to send.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Invoked {
    pub op: OpId,
    pub messages: Vec<Message>,
}

/// A finished operation. For writes `result` is the written tag and value;
/// for reads it is the returned pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Completion {
    pub op: OpId,
    pub result: TaggedValue,
}

/// What a client does with one incoming message.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClientStep {
    pub messages: Vec<Message>,
    pub completion: Option<Completion>,
}

impl ClientStep {
    pub fn idle() -> Self {
        Self::default()
    }

    pub fn send(messages: Vec<Message>) -> Self {
        ClientStep {
            messages,
            completion: None,
        }
    }

    pub fn complete(completion: Completion) -> Self {
        ClientStep {
            messages: Vec::new(),
            completion: Some(completion),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("{process} invoked an operation while another one is pending")]
    NotWellFormed { process: ProcessId },
    #[error("{process} cannot perform a {op}")]
    UnsupportedOperation { process: ProcessId, op: &'static str },
}

/// A reader or writer.
pub trait ClientNode: Send {
    fn id(&self) -> ProcessId;

    fn invoke(&mut self, invocation: Invocation) -> Result<Invoked, ProtocolError>;

    fn on_message(&mut self, msg: &Message) -> ClientStep;

    fn is_idle(&self) -> bool;
}

/// A replica server.
pub trait ServerNode: Send {
    fn id(&self) -> ProcessId;

    fn on_message(&mut self, msg: &Message) -> Vec<Message>;

    /// The tag of the locally stored value.
    fn tag(&self) -> Tag;

    /// Whether the protocol promises monotonically non-decreasing server
    /// tags and never emits a tag below one it has processed.
    fn tags_are_monotone(&self) -> bool {
        true
    }
}
